#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cider/geometry.hpp"
#include "cider/image.hpp"
#include "cider/model.hpp"

namespace cider {

enum class SurfaceKind { Plane, TiltedPlane, Sphere, Step };

std::string surface_name(SurfaceKind kind);
SurfaceKind parse_surface(const std::string& name);

struct SceneSpec {
  std::uint64_t seed = 0;
  SurfaceKind kind = SurfaceKind::Plane;
  int width = 64;
  int height = 64;
  int views = 5;
  double focal = 80.0;  // pixels
  double d_min = 2.0;
  double d_max = 8.0;
  // Rotation of the outermost source about the convergence point.
  double arc_degrees = 19.0;
  // Peak-to-peak contrast of the texture pattern around mid-gray.
  double texture_contrast = 0.6;
  int num_depth = 32;  // recorded in camera files
  // Optional fixed depth for Plane scenes; <= 0 draws one at random.
  double plane_depth = 0.0;
};

/// Plane (n . X = offset, cut to the half-spaces b . X <= c listed in
/// bounds) or sphere.
struct Primitive {
  enum class Type { Plane, Sphere } type = Type::Plane;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0;
  std::vector<std::pair<Eigen::Vector3d, double>> bounds;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0;

  /// Smallest positive ray parameter t with origin + t * dir on the
  /// primitive, or +inf.
  double intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
};

/// Tileable band-limited RGB texture on a square grid, looked up bilinearly
/// with wrap-around. World point X maps to (X.x + 0.37 X.z, X.y + 0.61 X.z)
/// scaled by texels_per_unit.
struct Texture {
  int size = 256;
  double texels_per_unit = 32.0;
  std::vector<float> rgb;

  Eigen::Vector3d lookup(double s, double t) const;
  Eigen::Vector3d at_world(const Eigen::Vector3d& X) const;
};

struct Scene {
  SceneSpec spec;
  std::vector<Primitive> surface;
  Texture texture;
  std::vector<CameraView> views;  // views[0] is the center camera at the world origin
  std::vector<Map2D> depth;       // full-resolution ground truth, 0 where no surface

  /// Closest surface hit along a ray; returns +inf when nothing is hit.
  double cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
};

/// Renders a scene. Throws std::invalid_argument on invalid specs and when
/// no admissible surface is found within a bounded number of draws.
Scene render_scene(const SceneSpec& spec);

/// Depth at feature resolution: value of full-resolution pixel
/// (factor x, factor y).
Map2D subsample_depth(const Map2D& depth, int factor);

/// Views reordered so `ref` comes first; ground truth at 1/4 resolution,
/// zeroed outside the reference depth range.
TrainingSample make_training_sample(const std::vector<CameraView>& views,
                                    const std::vector<Map2D>& depth, int ref);

/// On-disk scene: cam_XX.txt, image_XX.png, depth_XX.pfm per view.
struct SceneData {
  std::vector<CameraView> views;
  std::vector<Map2D> depth;  // empty when the directory has no ground truth
};

void write_scene(const std::filesystem::path& dir, const Scene& scene);
SceneData read_scene(const std::filesystem::path& dir);

/// Ground-truth cloud: every valid full-resolution depth pixel of every view
/// back-projected, decimated by `stride` pixels.
std::vector<Eigen::Vector3d> ground_truth_points(const SceneData& scene, int stride = 1);

}  // namespace cider
