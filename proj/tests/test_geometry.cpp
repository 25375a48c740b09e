#include <doctest.h>

#include <Eigen/Geometry>

#include "cider/geometry.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cider;

TEST_CASE("inverse-depth ordinals hit the range endpoints exactly") {
  for (int D : {2, 8, 32, 192}) {
    for (auto [lo, hi] : {std::pair{0.425, 0.935}, std::pair{2.0, 8.0}, std::pair{1e-3, 1e3}}) {
      CHECK(ordinal_to_depth(0, lo, hi, D) == hi);
      CHECK(ordinal_to_depth(D - 1, lo, hi, D) == lo);
      auto set = sample_inverse_depths(lo, hi, D);
      CHECK(set.depth(0) == hi);
      CHECK(set.depth(D - 1) == lo);
      for (int j = 1; j < D; ++j) CHECK(set.depth(j) < set.depth(j - 1));
    }
  }
}

TEST_CASE("inverse-depth hypotheses are evenly spaced in inverse depth") {
  auto set = sample_inverse_depths(2.0, 8.0, 16);
  const double step = (1.0 / 2.0 - 1.0 / 8.0) / 15;
  for (int j = 1; j < 16; ++j) {
    CHECK(1.0 / set.depth(j) - 1.0 / set.depth(j - 1) == doctest::Approx(step).epsilon(1e-12));
  }
  auto uni = sample_uniform_depths(2.0, 8.0, 16);
  CHECK(uni.depth(0) == 8.0);
  CHECK(uni.depth(15) == 2.0);
  for (int j = 1; j < 16; ++j) CHECK(uni.depth(j - 1) - uni.depth(j) == doctest::Approx(0.4));
}

TEST_CASE("ordinal and depth conversions invert each other") {
  for (double k : {0.0, 0.3, 5.5, 17.25, 31.0}) {
    const double d = ordinal_to_depth(k, 2.0, 8.0, 32);
    CHECK(depth_to_ordinal(d, 2.0, 8.0, 32) == doctest::Approx(k).epsilon(1e-12));
    const double du = ordinal_to_depth_uniform(k, 2.0, 8.0, 32);
    CHECK(depth_to_ordinal_uniform(du, 2.0, 8.0, 32) == doctest::Approx(k).epsilon(1e-12));
  }
}

TEST_CASE("out-of-range ordinals are clamped and counted") {
  const auto before = ordinal_clamp_count();
  CHECK(ordinal_to_depth(-1.0, 2.0, 8.0, 32) == 8.0);
  CHECK(ordinal_to_depth(40.0, 2.0, 8.0, 32) == 2.0);
  CHECK(ordinal_clamp_count() == before + 2);
}

TEST_CASE("invalid depth ranges are rejected") {
  CHECK_THROWS_AS(ordinal_to_depth(1, 0.0, 8.0, 32), std::invalid_argument);
  CHECK_THROWS_AS(ordinal_to_depth(1, 8.0, 2.0, 32), std::invalid_argument);
  CHECK_THROWS_AS(sample_inverse_depths(2.0, 8.0, 1), std::invalid_argument);
}

TEST_CASE("projection agrees with the world-frame oracle") {
  auto ref = testing::make_camera(80, 31.5, 32.5, Eigen::Vector3d(0.3, 1, 0), 0.2,
                                  Eigen::Vector3d(0.1, -0.2, 0.3));
  auto src = testing::make_camera(75, 30, 33, Eigen::Vector3d(-0.2, 1, 0.1), -0.25,
                                  Eigen::Vector3d(-0.8, 0.1, 0.2));
  for (double d : {2.0, 3.7, 8.0}) {
    for (auto [x, y] : {std::pair{0.0, 0.0}, std::pair{40.5, 12.25}, std::pair{63.0, 63.0}}) {
      auto p = project(Eigen::Vector2d(x, y), d, ref, src);
      double u, v;
      REQUIRE(oracle::project(testing::to_oracle(ref), testing::to_oracle(src), x, y, d, u, v));
      CHECK(p.valid);
      CHECK(p.u == doctest::Approx(u).epsilon(1e-12));
      CHECK(p.v == doctest::Approx(v).epsilon(1e-12));
    }
  }
}

TEST_CASE("a camera projects onto itself at every depth") {
  auto cam = testing::make_camera(50, 20, 18, Eigen::Vector3d::UnitX(), 0.4,
                                  Eigen::Vector3d(1, 2, 3));
  for (double d : {0.5, 4.0}) {
    auto p = project(Eigen::Vector2d(7.25, 11.5), d, cam, cam);
    CHECK(p.u == doctest::Approx(7.25));
    CHECK(p.v == doctest::Approx(11.5));
    CHECK(p.z == doctest::Approx(d));
  }
}

TEST_CASE("points behind the source camera are invalid") {
  auto ref = testing::make_camera(50, 20, 20, Eigen::Vector3d::UnitY(), 0.0, Eigen::Vector3d::Zero());
  auto src = testing::make_camera(50, 20, 20, Eigen::Vector3d::UnitY(), 0.0,
                                  Eigen::Vector3d(0, 0, -5));
  CHECK_FALSE(project(Eigen::Vector2d(20, 20), 2.0, ref, src).valid);
  CHECK(project(Eigen::Vector2d(20, 20), 6.0, ref, src).valid);
}

TEST_CASE("unproject inverts projection") {
  auto cam = testing::make_camera(60, 30, 25, Eigen::Vector3d(1, 1, 0), 0.3,
                                  Eigen::Vector3d(0.5, 0, -1));
  const Eigen::Vector3d X = cam.unproject(12.5, 40.0, 3.25);
  const Eigen::Vector3d h = cam.K * cam.world_to_camera(X);
  CHECK(h.z() == doctest::Approx(3.25));
  CHECK(h.x() / h.z() == doctest::Approx(12.5));
  CHECK(h.y() / h.z() == doctest::Approx(40.0));
}

TEST_CASE("scaled cameras keep the pose and scale the intrinsics") {
  auto cam = testing::make_camera(80, 31.5, 32.5, Eigen::Vector3d::UnitY(), 0.1,
                                  Eigen::Vector3d(1, 0, 0));
  auto q = cam.scaled(0.25);
  CHECK(q.K(0, 0) == 20.0);
  CHECK(q.K(0, 2) == doctest::Approx(7.875));
  CHECK(q.K(2, 2) == 1.0);
  CHECK(q.R == cam.R);
  CHECK(q.t == cam.t);
}

TEST_CASE("relative pose maps reference to source coordinates") {
  auto ref = testing::make_camera(1, 0, 0, Eigen::Vector3d(1, 2, 3), 0.7, Eigen::Vector3d(1, -1, 2));
  auto src = testing::make_camera(1, 0, 0, Eigen::Vector3d(-1, 0, 1), 0.3, Eigen::Vector3d(0, 3, 1));
  auto pose = relative_pose(ref, src);
  const Eigen::Vector3d X(0.4, -2.0, 5.0);
  CHECK((pose.R * ref.world_to_camera(X) + pose.t - src.world_to_camera(X)).norm() < 1e-12);
}

TEST_CASE("camera files round-trip bit-exactly") {
  auto cam = testing::make_camera(80.125, 31.5, 32.5, Eigen::Vector3d(0.2, 1, 0.1), 0.31,
                                  Eigen::Vector3d(0.1, -0.3, 0.7), 2.0, 8.0);
  cam.num_depth = 32;
  auto back = parse_camera_text(format_camera_text(cam));
  CHECK(back.K == cam.K);
  CHECK(back.R == cam.R);
  CHECK(back.t == cam.t);
  CHECK(back.d_min == 2.0);
  CHECK(back.d_max == 8.0);
  CHECK(back.num_depth == 32);
}

TEST_CASE("malformed camera files are rejected") {
  const std::string good =
      "extrinsic\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\nintrinsic\n10 0 5\n0 10 5\n0 0 1\n\n1 3 8\n";
  CHECK_NOTHROW(parse_camera_text(good));
  CHECK_THROWS_AS(parse_camera_text("intrinsic\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_camera_text(good + "7\n"), std::invalid_argument);
  std::string skew = good;
  skew.replace(skew.find("1 0 0 0"), 7, "2 0 0 0");
  CHECK_THROWS_AS(parse_camera_text(skew), std::invalid_argument);
  std::string range = good;
  range.replace(range.find("1 3 8"), 5, "3 1 8");
  CHECK_THROWS_AS(parse_camera_text(range), std::invalid_argument);
  std::string word = good;
  word.replace(word.find("10 0 5"), 6, "10 x 5");
  CHECK_THROWS_AS(parse_camera_text(word), std::invalid_argument);
}
