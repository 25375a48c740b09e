#pragma once

#include <Eigen/Geometry>

#include "cider/geometry.hpp"
#include "oracles.hpp"

namespace testing {

inline cider::CameraView make_camera(double f, double cx, double cy, const Eigen::Vector3d& axis,
                                     double angle, const Eigen::Vector3d& t, double d_min = 2.0,
                                     double d_max = 6.0) {
  cider::CameraView c;
  c.K << f, 0, cx, 0, f, cy, 0, 0, 1;
  c.R = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  c.t = t;
  c.d_min = d_min;
  c.d_max = d_max;
  return c;
}

inline oracle::Cam to_oracle(const cider::CameraView& c) { return {c.K, c.R, c.t}; }

// A reference at the origin and a source displaced sideways and turned
// towards the reference's optical axis, both at an 8x8 feature grid.
inline cider::CameraView small_ref() {
  return make_camera(6.0, 3.5, 3.5, Eigen::Vector3d::UnitY(), 0.0, Eigen::Vector3d::Zero());
}
inline cider::CameraView small_src(double side = 0.6, double angle = -0.12) {
  return make_camera(6.2, 3.4, 3.6, Eigen::Vector3d(0.1, 1.0, 0.05), angle,
                     Eigen::Vector3d(-side, 0.05, 0.1));
}

}  // namespace testing
