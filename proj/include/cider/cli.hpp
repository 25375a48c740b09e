#pragma once

namespace cider {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

/// Entry point of the `cider` tool: synth | train | infer | fuse | eval.
int run_cli(int argc, const char* const* argv);

}  // namespace cider
