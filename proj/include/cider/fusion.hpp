#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cider/geometry.hpp"
#include "cider/image.hpp"
#include "cider/io.hpp"
#include "cider/tensor.hpp"

namespace cider {

struct FusionConfig {
  double prob_thresh = 0.8;
  double depth_tol = 0.01;
  double reproj_tol = 1.0;  // pixels at depth-map resolution
  int min_views = 3;        // the reference counts as one view

  void validate() const;
};

/// Sum of prob over the 4 integer ordinals nearest k: floor(k)-1 .. floor(k)+2,
/// clipped to [0, D-1]. prob: [D, h, w]; ordinal: h x w.
template <typename T>
Map2D confidence_map(const Tensor<T>& prob, const Map2D& ordinal);

/// Copy of depth with pixels whose confidence is below thresh set to 0.
Map2D filter_depth(const Map2D& depth, const Map2D& confidence, double thresh);

/// A depth map with its camera, intrinsics at the depth-map resolution.
/// Depth <= 0 marks an invalid pixel. color may be empty or of any size with
/// the same aspect ratio; it is sampled at the nearest scaled pixel.
struct DepthView {
  CameraView camera;
  Map2D depth;
  Image color;
};

struct PairCheck {
  bool consistent = false;
  int neighbor_pixel = -1;  // nearest pixel index in the neighbor, -1 if outside
  // d_est is the neighbor depth interpolated bilinearly at the projection;
  // any contributing invalid pixel fails the check.
  double depth_error = 0;   // |d_proj - d_est| / d_est
  double reproj_error = 0;  // ||p' - p|| in reference pixels
};

/// Geometric test of reference pixel (x, y) with depth d against one neighbor.
PairCheck check_pair(const DepthView& ref, int x, int y, double depth, const DepthView& neighbor,
                     const FusionConfig& config);

/// Per-pixel number of neighbors agreeing with the reference depth.
std::vector<int> consistency_counts(const DepthView& ref, const std::vector<DepthView>& neighbors,
                                    const FusionConfig& config);

/// Where a fused point came from: the seeding view/pixel and the certifying
/// neighbor (view, pixel) pairs.
struct FusedPointSource {
  int view = 0;
  int pixel = 0;
  std::vector<std::pair<int, int>> neighbors;
};

struct FusionReport {
  std::vector<FusedPointSource> sources;  // parallel to the cloud's points
  std::vector<std::string> warnings;
};

/// Each view in turn seeds points from its unconsumed valid pixels; seeds
/// supported by at least min_views views (reference included) emit the mean
/// of the seed and certifying neighbor points, whose pixels become consumed.
/// Neighbors whose camera duplicates the reference or an earlier neighbor
/// add no support.
PointCloud fuse(const std::vector<DepthView>& views, const FusionConfig& config,
                FusionReport* report = nullptr);

}  // namespace cider
