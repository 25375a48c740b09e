#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "cider/image.hpp"

namespace cider {

/// Uniform spatial hash grid for exact nearest-neighbor distance queries.
class NearestNeighborIndex {
 public:
  NearestNeighborIndex(const std::vector<Eigen::Vector3d>& points, double cell_size);

  /// Euclidean distance to the closest indexed point (+inf when empty).
  double distance(const Eigen::Vector3d& q) const;

 private:
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  Key key_of(const Eigen::Vector3d& p) const;

  const std::vector<Eigen::Vector3d>& points_;
  double cell_;
  std::unordered_map<Key, std::vector<std::uint32_t>, KeyHash> cells_;
  Key lo_{0, 0, 0}, hi_{0, 0, 0};
};

struct CloudMetrics {
  double accuracy = 0;      // mean distance reconstructed -> ground truth
  double completeness = 0;  // mean distance ground truth -> reconstructed
  double overall = 0;       // mean of the two
  double threshold = 0;
  double precision = 0;  // fraction of reconstructed points within threshold
  double recall = 0;     // fraction of ground-truth points within threshold
  double f1 = 0;
};

/// Distance and percentage metrics between a reconstruction and ground
/// truth. threshold <= 0 selects 1% of the ground-truth bounding-box
/// diagonal. Throws std::invalid_argument when either cloud is empty.
CloudMetrics evaluate_clouds(const std::vector<Eigen::Vector3d>& reconstruction,
                             const std::vector<Eigen::Vector3d>& ground_truth,
                             double threshold = 0.0);

double bounding_box_diagonal(const std::vector<Eigen::Vector3d>& points);

struct DepthMetrics {
  std::size_t pixels = 0;  // pixels valid in both maps
  double mae = 0;
  // Fraction of pixels with |pred - gt| / gt below 1%, 2% and 5%.
  double inlier_1 = 0, inlier_2 = 0, inlier_5 = 0;
};

DepthMetrics evaluate_depth(const Map2D& predicted, const Map2D& ground_truth);

}  // namespace cider
