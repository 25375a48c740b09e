#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cider/image.hpp"

namespace cider {

/// Pinhole camera with world-to-camera pose x_cam = R * x_world + t, its
/// image and scene depth range.
struct CameraView {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  double d_min = 1.0;
  double d_max = 2.0;
  // Hypothesis count recorded in the camera file; 0 when unspecified.
  int num_depth = 0;
  Image image;

  /// Throws std::invalid_argument when R is not a rotation, K is not an
  /// upper-triangular intrinsic matrix or the depth range is empty.
  void validate() const;

  Eigen::Vector3d center() const { return -R.transpose() * t; }
  Eigen::Vector3d world_to_camera(const Eigen::Vector3d& x) const { return R * x + t; }
  Eigen::Vector3d camera_to_world(const Eigen::Vector3d& x) const {
    return R.transpose() * (x - t);
  }
  /// World point at pixel (u, v) with z-depth `depth`.
  Eigen::Vector3d unproject(double u, double v, double depth) const;

  /// Same pose, intrinsics for an image resampled by `scale` (focal lengths,
  /// skew and principal point multiplied). The image is dropped.
  CameraView scaled(double scale) const;

  bool same_camera(const CameraView& other, double tol = 1e-12) const;
};

struct RelativePose {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
};

/// Pose taking reference-camera coordinates to source-camera coordinates:
/// x_src = R * x_ref + t.
RelativePose relative_pose(const CameraView& ref, const CameraView& src);

struct ProjectedPoint {
  double u = 0;
  double v = 0;
  double z = 0;  // depth in the source camera
  bool valid = false;  // false when the point is on or behind the source camera
};

/// Maps reference pixels at a hypothesized depth into a source image:
/// K_src (R_rel (K_ref^-1 p d) + t_rel). Precomputes the composed matrices so
/// per-pixel evaluation is a 3x3 multiply-add.
class PixelProjector {
 public:
  PixelProjector(const CameraView& ref, const CameraView& src);

  ProjectedPoint project(double x, double y, double depth) const {
    const Eigen::Vector3d h = depth * (M_.col(0) * x + M_.col(1) * y + M_.col(2)) + b_;
    ProjectedPoint p;
    p.z = h.z();
    if (!(h.z() > 0.0)) return p;
    p.u = h.x() / h.z();
    p.v = h.y() / h.z();
    p.valid = true;
    return p;
  }

 private:
  Eigen::Matrix3d M_;
  Eigen::Vector3d b_;
};

ProjectedPoint project(const Eigen::Vector2d& pixel, double depth, const CameraView& ref,
                       const CameraView& src);

enum class DepthSampling { InverseDepth, UniformDepth };

/// Continuous ordinal k in [0, D-1] to depth under inverse-depth sampling:
/// 1/d = (1/d_min - 1/d_max) k / (D-1) + 1/d_max. k = 0 gives d_max and
/// k = D-1 gives d_min exactly. Out-of-range k is clamped and counted.
double ordinal_to_depth(double k, double d_min, double d_max, int count);
double depth_to_ordinal(double depth, double d_min, double d_max, int count);

/// Affine counterparts for uniform depth sampling (d_0 = d_max).
double ordinal_to_depth_uniform(double k, double d_min, double d_max, int count);
double depth_to_ordinal_uniform(double depth, double d_min, double d_max, int count);

/// Number of ordinals clamped by ordinal_to_depth* since process start.
std::uint64_t ordinal_clamp_count();

/// Discrete depth hypotheses d_0..d_{D-1}, strictly decreasing from d_max to
/// d_min.
class DepthHypothesisSet {
 public:
  DepthHypothesisSet(double d_min, double d_max, int count, DepthSampling sampling);

  int size() const { return static_cast<int>(depths_.size()); }
  double depth(int j) const { return depths_.at(static_cast<std::size_t>(j)); }
  const std::vector<double>& depths() const { return depths_; }
  double d_min() const { return d_min_; }
  double d_max() const { return d_max_; }
  DepthSampling sampling() const { return sampling_; }

  double ordinal_to_depth(double k) const;
  double depth_to_ordinal(double depth) const;

 private:
  double d_min_, d_max_;
  DepthSampling sampling_;
  std::vector<double> depths_;
};

DepthHypothesisSet sample_inverse_depths(double d_min, double d_max, int count);
DepthHypothesisSet sample_uniform_depths(double d_min, double d_max, int count);

/// Camera text file:
///   extrinsic / 4 rows of [R|t; 0 0 0 1] / intrinsic / 3 rows of K /
///   "d_min d_max D". Parsing is locale-independent.
CameraView read_camera_file(const std::filesystem::path& path);
void write_camera_file(const std::filesystem::path& path, const CameraView& view);
CameraView parse_camera_text(const std::string& text);
std::string format_camera_text(const CameraView& view);

}  // namespace cider
