#include "cider/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cider {

std::size_t NearestNeighborIndex::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
  h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
  h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
  return static_cast<std::size_t>(h);
}

NearestNeighborIndex::Key NearestNeighborIndex::key_of(const Eigen::Vector3d& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_)),
          static_cast<std::int64_t>(std::floor(p.z() / cell_))};
}

NearestNeighborIndex::NearestNeighborIndex(const std::vector<Eigen::Vector3d>& points,
                                           double cell_size)
    : points_(points), cell_(cell_size) {
  if (!(cell_size > 0)) throw std::invalid_argument("hash grid cell size must be positive");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Key k = key_of(points[i]);
    if (i == 0) {
      lo_ = hi_ = k;
    } else {
      lo_ = {std::min(lo_.x, k.x), std::min(lo_.y, k.y), std::min(lo_.z, k.z)};
      hi_ = {std::max(hi_.x, k.x), std::max(hi_.y, k.y), std::max(hi_.z, k.z)};
    }
    cells_[k].push_back(static_cast<std::uint32_t>(i));
  }
}

double NearestNeighborIndex::distance(const Eigen::Vector3d& q) const {
  if (points_.empty()) return std::numeric_limits<double>::infinity();
  const Key c = key_of(q);
  double best2 = std::numeric_limits<double>::infinity();
  // Shells of growing Chebyshev radius; any point in shell r lies at least
  // (r - 1) * cell away from q.
  const std::int64_t max_r = std::max({std::abs(c.x - lo_.x), std::abs(c.x - hi_.x), std::abs(c.y - lo_.y),
                                       std::abs(c.y - hi_.y), std::abs(c.z - lo_.z), std::abs(c.z - hi_.z)});
  for (std::int64_t r = 0; r <= max_r; ++r) {
    const double reach = static_cast<double>(r - 1) * cell_;
    if (r > 0 && reach > 0 && reach * reach > best2) break;
    for (std::int64_t dz = std::max(-r, lo_.z - c.z); dz <= std::min(r, hi_.z - c.z); ++dz)
      for (std::int64_t dy = std::max(-r, lo_.y - c.y); dy <= std::min(r, hi_.y - c.y); ++dy)
        for (std::int64_t dx = std::max(-r, lo_.x - c.x); dx <= std::min(r, hi_.x - c.x); ++dx) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
          const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::uint32_t i : it->second) best2 = std::min(best2, (points_[i] - q).squaredNorm());
        }
  }
  return std::sqrt(best2);
}

double bounding_box_diagonal(const std::vector<Eigen::Vector3d>& points) {
  if (points.empty()) return 0.0;
  Eigen::Vector3d lo = points.front(), hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

CloudMetrics evaluate_clouds(const std::vector<Eigen::Vector3d>& reconstruction,
                             const std::vector<Eigen::Vector3d>& ground_truth, double threshold) {
  if (reconstruction.empty() || ground_truth.empty()) {
    throw std::invalid_argument("cannot evaluate an empty point cloud");
  }
  CloudMetrics m;
  m.threshold = threshold > 0 ? threshold : 0.01 * bounding_box_diagonal(ground_truth);
  if (!(m.threshold > 0)) m.threshold = 1e-9;
  const NearestNeighborIndex gt_index(ground_truth, m.threshold);
  const NearestNeighborIndex rec_index(reconstruction, m.threshold);
  std::size_t hits = 0;
  for (const auto& p : reconstruction) {
    const double d = gt_index.distance(p);
    m.accuracy += d;
    if (d <= m.threshold) ++hits;
  }
  m.accuracy /= static_cast<double>(reconstruction.size());
  m.precision = static_cast<double>(hits) / static_cast<double>(reconstruction.size());
  hits = 0;
  for (const auto& p : ground_truth) {
    const double d = rec_index.distance(p);
    m.completeness += d;
    if (d <= m.threshold) ++hits;
  }
  m.completeness /= static_cast<double>(ground_truth.size());
  m.recall = static_cast<double>(hits) / static_cast<double>(ground_truth.size());
  m.overall = 0.5 * (m.accuracy + m.completeness);
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

DepthMetrics evaluate_depth(const Map2D& predicted, const Map2D& ground_truth) {
  if (predicted.width != ground_truth.width || predicted.height != ground_truth.height) {
    throw std::invalid_argument("evaluate_depth: map sizes differ");
  }
  DepthMetrics m;
  std::size_t in1 = 0, in2 = 0, in5 = 0;
  for (std::size_t i = 0; i < predicted.values.size(); ++i) {
    const double p = predicted.values[i];
    const double g = ground_truth.values[i];
    if (!(p > 0) || !(g > 0)) continue;
    const double err = std::abs(p - g);
    m.mae += err;
    in1 += err / g < 0.01;
    in2 += err / g < 0.02;
    in5 += err / g < 0.05;
    ++m.pixels;
  }
  if (m.pixels > 0) {
    const double n = static_cast<double>(m.pixels);
    m.mae /= n;
    m.inlier_1 = in1 / n;
    m.inlier_2 = in2 / n;
    m.inlier_5 = in5 / n;
  }
  return m;
}

}  // namespace cider
