#include "cider/cli.hpp"

int main(int argc, char** argv) { return cider::run_cli(argc, argv); }
