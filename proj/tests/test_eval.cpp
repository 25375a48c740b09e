#include <doctest.h>

#include <random>

#include "cider/eval.hpp"

using namespace cider;

namespace {

double brute_distance(const std::vector<Eigen::Vector3d>& pts, const Eigen::Vector3d& q) {
  double best = INFINITY;
  for (const auto& p : pts) best = std::min(best, (p - q).norm());
  return best;
}

std::vector<Eigen::Vector3d> random_points(std::mt19937_64& rng, int n, double spread) {
  std::normal_distribution<double> g(0.0, spread);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(g(rng), g(rng), g(rng) * 0.1 + 4.0);
  return pts;
}

}  // namespace

TEST_CASE("hash-grid distances equal brute force") {
  std::mt19937_64 rng(1);
  auto pts = random_points(rng, 500, 1.0);
  for (double cell : {0.01, 0.1, 1.0, 10.0}) {
    NearestNeighborIndex index(pts, cell);
    for (const auto& q : random_points(rng, 100, 3.0)) {
      CHECK(index.distance(q) == doctest::Approx(brute_distance(pts, q)).epsilon(1e-12));
    }
    CHECK(index.distance({100, -50, 30}) == doctest::Approx(brute_distance(pts, {100, -50, 30})));
  }
  std::vector<Eigen::Vector3d> none;
  CHECK(std::isinf(NearestNeighborIndex(none, 1.0).distance({0, 0, 0})));
  CHECK_THROWS_AS(NearestNeighborIndex(pts, 0.0), std::invalid_argument);
}

TEST_CASE("cloud metrics match brute-force definitions") {
  std::mt19937_64 rng(2);
  auto gt = random_points(rng, 300, 1.0);
  auto rec = random_points(rng, 200, 1.0);
  auto m = evaluate_clouds(rec, gt, 0.2);
  double acc = 0, comp = 0;
  int prec = 0, rec_in = 0;
  for (const auto& p : rec) {
    const double d = brute_distance(gt, p);
    acc += d;
    prec += d < 0.2;
  }
  for (const auto& p : gt) {
    const double d = brute_distance(rec, p);
    comp += d;
    rec_in += d < 0.2;
  }
  CHECK(m.accuracy == doctest::Approx(acc / 200));
  CHECK(m.completeness == doctest::Approx(comp / 300));
  CHECK(m.overall == doctest::Approx((acc / 200 + comp / 300) / 2));
  CHECK(m.precision == doctest::Approx(prec / 200.0));
  CHECK(m.recall == doctest::Approx(rec_in / 300.0));
  CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall / (m.precision + m.recall)));
}

TEST_CASE("identical clouds score perfectly and the default threshold scales with the scene") {
  std::mt19937_64 rng(3);
  auto gt = random_points(rng, 100, 1.0);
  auto m = evaluate_clouds(gt, gt);
  CHECK(m.accuracy == 0.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.threshold == doctest::Approx(0.01 * bounding_box_diagonal(gt)));
  CHECK(bounding_box_diagonal({{0, 0, 0}, {1, 2, 2}}) == doctest::Approx(3.0));
  CHECK_THROWS_AS(evaluate_clouds({}, gt), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_clouds(gt, {}), std::invalid_argument);
}

TEST_CASE("depth metrics only count pixels valid in both maps") {
  Map2D pred(4, 1), gt(4, 1);
  pred.values = {2.0f, 4.1f, 0.0f, 5.0f};
  gt.values = {2.01f, 4.0f, 3.0f, 0.0f};
  auto m = evaluate_depth(pred, gt);
  CHECK(m.pixels == 2);
  CHECK(m.mae == doctest::Approx((0.01 + 0.1) / 2).epsilon(1e-5));
  CHECK(m.inlier_1 == doctest::Approx(0.5));
  CHECK(m.inlier_5 == doctest::Approx(1.0));
  CHECK_THROWS_AS(evaluate_depth(pred, Map2D(3, 1)), std::invalid_argument);
}
