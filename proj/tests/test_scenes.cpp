#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cider/fusion.hpp"
#include "cider/scenes.hpp"
#include "oracles.hpp"

using namespace cider;

namespace {

Scene scene_of(SurfaceKind kind, std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.kind = kind;
  return render_scene(spec);
}

Eigen::Vector3d pixel_ray(const CameraView& v, double x, double y) {
  return v.R.transpose() * (v.K.inverse() * Eigen::Vector3d(x, y, 1));
}

// Whether world point X is the first surface hit seen from the view's center.
bool visible(const Scene& s, const CameraView& v, const Eigen::Vector3d& X) {
  const Eigen::Vector3d c = v.center();
  const Eigen::Vector3d dir = X - c;
  return s.cast(c, dir) > 1 - 1e-7;
}

// Index of the primitive hit first along a ray, -1 for none.
int first_hit(const Scene& s, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const double t = s.cast(origin, dir);
  for (std::size_t i = 0; i < s.surface.size(); ++i)
    if (s.surface[i].intersect(origin, dir) == t) return static_cast<int>(i);
  return -1;
}

}  // namespace

TEST_CASE("a fronto-parallel plane has constant reference depth") {
  SceneSpec spec;
  spec.seed = 1;
  spec.plane_depth = 3.5;
  Scene s = render_scene(spec);
  for (float d : s.depth[0].values) CHECK(d == 3.5f);
  CHECK(s.views[0].R == Eigen::Matrix3d::Identity());
  CHECK(s.views[0].t == Eigen::Vector3d::Zero());
}

TEST_CASE("sphere depth matches the closed-form ray intersection") {
  Scene s = scene_of(SurfaceKind::Sphere, 5);
  const Primitive* ball = nullptr;
  for (const auto& p : s.surface)
    if (p.type == Primitive::Type::Sphere) ball = &p;
  REQUIRE(ball != nullptr);
  int hits = 0;
  for (std::size_t v = 0; v < s.views.size(); ++v) {
    const CameraView& cam = s.views[v];
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        // |C + t dir - c|^2 = r^2 with dir scaled so t is the z-depth.
        const Eigen::Vector3d dir = pixel_ray(cam, x, y);
        const Eigen::Vector3d oc = cam.center() - ball->center;
        const double a = dir.dot(dir), b = 2 * oc.dot(dir), c = oc.dot(oc) - ball->radius * ball->radius;
        const double disc = b * b - 4 * a * c;
        if (disc < 0) continue;
        const double t = (-b - std::sqrt(disc)) / (2 * a);
        if (t <= 0) continue;
        ++hits;
        const double cast = s.cast(cam.center(), dir);
        CHECK(std::abs(cast - t) < 1e-9);
        CHECK(s.depth[v].at(x, y) == static_cast<float>(cast));
      }
  }
  CHECK(hits > 200);
}

TEST_CASE("reference ground truth lies inside the depth range") {
  for (auto kind : {SurfaceKind::Plane, SurfaceKind::TiltedPlane, SurfaceKind::Sphere, SurfaceKind::Step}) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      Scene s = scene_of(kind, seed);
      for (float d : s.depth[0].values) {
        CHECK(d >= 2.0f);
        CHECK(d <= 8.0f);
      }
    }
  }
}

TEST_CASE("views are photoconsistent through the ground-truth depth") {
  for (auto kind : {SurfaceKind::Plane, SurfaceKind::TiltedPlane, SurfaceKind::Sphere, SurfaceKind::Step}) {
    Scene s = scene_of(kind, 11);
    const CameraView& a = s.views[0];
    const CameraView& b = s.views[2];
    double sq = 0;
    int n = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double d = s.depth[0].at(x, y);
        if (!(d > 0)) continue;
        const Eigen::Vector3d X = a.unproject(x, y, d);
        if (!visible(s, b, X)) continue;
        const Eigen::Vector3d h = b.K * b.world_to_camera(X);
        const double u = h.x() / h.z(), v = h.y() / h.z();
        if (u < 1 || v < 1 || u > 62 || v > 62) continue;
        for (int c = 0; c < 3; ++c) {
          std::vector<double> plane(64 * 64);
          for (int i = 0; i < 64 * 64; ++i) plane[static_cast<std::size_t>(i)] = b.image.pixels[static_cast<std::size_t>(i) * 3 + c];
          bool ok;
          const double warped = oracle::bilinear(plane, 64, 64, u, v, ok);
          sq += std::pow(warped - a.image.at(x, y, c), 2);
          ++n;
        }
      }
    REQUIRE(n > 1000);
    CAPTURE(surface_name(kind));
    CHECK(std::sqrt(sq / n) < 0.02);
  }
}

TEST_CASE("ground truth passes the fusion consistency check on co-visible pixels") {
  FusionConfig config;
  for (auto kind : {SurfaceKind::Plane, SurfaceKind::TiltedPlane, SurfaceKind::Sphere, SurfaceKind::Step}) {
    Scene s = scene_of(kind, 4);
    DepthView ref{s.views[0], s.depth[0], {}};
    int covisible = 0, consistent = 0;
    for (std::size_t v = 1; v < s.views.size(); ++v) {
      DepthView nb{s.views[v], s.depth[v], {}};
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const double d = s.depth[0].at(x, y);
          const Eigen::Vector3d X = ref.camera.unproject(x, y, d);
          const Eigen::Vector3d h = nb.camera.K * nb.camera.world_to_camera(X);
          const double u = h.x() / h.z(), w = h.y() / h.z();
          if (u < 0 || w < 0 || u > 63 || w > 63 || !visible(s, nb.camera, X)) continue;
          // Every pixel around the projection must see the primitive X is on.
          const int prim = first_hit(s, ref.camera.center(), pixel_ray(ref.camera, x, y));
          bool same = true;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int qx = std::min(63, static_cast<int>(std::floor(u)) + dx);
              const int qy = std::min(63, static_cast<int>(std::floor(w)) + dy);
              same = same && first_hit(s, nb.camera.center(), pixel_ray(nb.camera, qx, qy)) == prim;
            }
          if (!same) continue;
          // Near-tangent views leave bilinear depth lookup ill-conditioned.
          const Primitive& surf = s.surface[static_cast<std::size_t>(prim)];
          const Eigen::Vector3d normal = surf.type == Primitive::Type::Sphere
                                             ? Eigen::Vector3d((X - surf.center).normalized())
                                             : surf.normal;
          const double cos_ref = std::abs(normal.dot((X - ref.camera.center()).normalized()));
          const double cos_nb = std::abs(normal.dot((X - nb.camera.center()).normalized()));
          if (std::min(cos_ref, cos_nb) < std::cos(75.0 * 3.14159265358979 / 180)) continue;
          ++covisible;
          consistent += check_pair(ref, x, y, d, nb, config).consistent;
        }
    }
    CAPTURE(surface_name(kind));
    REQUIRE(covisible > 1000);
    CHECK(consistent == covisible);
  }
}

TEST_CASE("scene generation is deterministic per seed") {
  Scene a = scene_of(SurfaceKind::Step, 21), b = scene_of(SurfaceKind::Step, 21);
  Scene c = scene_of(SurfaceKind::Step, 22);
  CHECK(a.views[3].image.pixels == b.views[3].image.pixels);
  CHECK(a.depth[3].values == b.depth[3].values);
  CHECK(a.views[3].image.pixels != c.views[3].image.pixels);
}

TEST_CASE("cameras sit on an arc facing the convergence point") {
  Scene s = scene_of(SurfaceKind::Plane, 2);
  REQUIRE(s.views.size() == 5);
  const Eigen::Vector3d target(0, 0, 3.2);
  for (const auto& v : s.views) {
    CHECK((v.center() - target).norm() == doctest::Approx(3.2));
    const Eigen::Vector3d axis = v.R.transpose() * Eigen::Vector3d::UnitZ();
    CHECK((target - v.center()).normalized().dot(axis) == doctest::Approx(1.0));
  }
  const double outer = std::acos(s.views[4].R(2, 2)) * 180 / 3.14159265358979;
  CHECK(outer == doctest::Approx(19.0));
}

TEST_CASE("subsampling keeps every fourth pixel") {
  Map2D m(8, 8);
  for (int i = 0; i < 64; ++i) m.values[static_cast<std::size_t>(i)] = static_cast<float>(i);
  Map2D q = subsample_depth(m, 4);
  CHECK(q.width == 2);
  CHECK(q.at(1, 1) == m.at(4, 4));
  CHECK(q.at(1, 0) == m.at(4, 0));
  CHECK_THROWS_AS(subsample_depth(Map2D(6, 8), 4), std::invalid_argument);
}

TEST_CASE("training samples put the chosen reference first") {
  Scene s = scene_of(SurfaceKind::Sphere, 3);
  auto sample = make_training_sample(s.views, s.depth, 2);
  CHECK(sample.views[0].same_camera(s.views[2]));
  CHECK(sample.gt_depth.width == 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const float g = s.depth[2].at(4 * x, 4 * y);
      const bool inside = g >= sample.views[0].d_min && g <= sample.views[0].d_max;
      CHECK(sample.gt_depth.at(x, y) == (inside ? g : 0.0f));
    }
}

TEST_CASE("scenes round-trip through their on-disk form") {
  Scene s = scene_of(SurfaceKind::TiltedPlane, 8);
  const auto dir = std::filesystem::temp_directory_path() / "cider_scene_rt";
  std::filesystem::remove_all(dir);
  write_scene(dir, s);
  SceneData back = read_scene(dir);
  REQUIRE(back.views.size() == 5);
  REQUIRE(back.depth.size() == 5);
  for (std::size_t v = 0; v < 5; ++v) {
    CHECK(back.views[v].K == s.views[v].K);
    CHECK(back.views[v].R == s.views[v].R);
    CHECK(back.depth[v].values == s.depth[v].values);
    for (std::size_t i = 0; i < s.views[v].image.pixels.size(); ++i) {
      CHECK(std::abs(back.views[v].image.pixels[i] - s.views[v].image.pixels[i]) <= 0.5f / 255 + 1e-6f);
    }
  }
  CHECK(ground_truth_points(back, 1).size() == 5u * 64 * 64);
  CHECK(ground_truth_points(back, 2).size() == 5u * 32 * 32);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(read_scene(dir));
}

TEST_CASE("invalid specifications are rejected") {
  SceneSpec spec;
  spec.d_min = 9;
  CHECK_THROWS_AS(render_scene(spec), std::invalid_argument);
  spec = SceneSpec{};
  spec.plane_depth = 20;
  CHECK_THROWS_AS(render_scene(spec), std::invalid_argument);
  CHECK(parse_surface("step") == SurfaceKind::Step);
  CHECK_THROWS_AS(parse_surface("torus"), std::invalid_argument);
}
