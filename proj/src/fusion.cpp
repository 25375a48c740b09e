#include "cider/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cider/cost_volume.hpp"

namespace cider {

void FusionConfig::validate() const {
  if (!(prob_thresh > 0) || !(depth_tol > 0) || !(reproj_tol > 0) || min_views < 1) {
    throw std::invalid_argument("fusion thresholds must be positive");
  }
}

template <typename T>
Map2D confidence_map(const Tensor<T>& prob, const Map2D& ordinal) {
  if (prob.ndim() != 3 || prob.dim(1) != ordinal.height || prob.dim(2) != ordinal.width) {
    throw std::invalid_argument("confidence_map: probability volume " + shape_string(prob.shape()) +
                                " does not match the ordinal map");
  }
  const std::int64_t D = prob.dim(0);
  const std::int64_t hw = prob.dim(1) * prob.dim(2);
  const auto p = prob.data();
  Map2D conf(ordinal.width, ordinal.height);
  for (std::int64_t i = 0; i < hw; ++i) {
    const auto base = static_cast<std::int64_t>(std::floor(ordinal.values[i]));
    double total = 0;
    for (std::int64_t j = std::max<std::int64_t>(base - 1, 0); j <= std::min(base + 2, D - 1); ++j) {
      total += static_cast<double>(p[j * hw + i]);
    }
    conf.values[i] = static_cast<float>(total);
  }
  return conf;
}

Map2D filter_depth(const Map2D& depth, const Map2D& confidence, double thresh) {
  if (depth.width != confidence.width || depth.height != confidence.height) {
    throw std::invalid_argument("filter_depth: depth and confidence sizes differ");
  }
  Map2D out = depth;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (confidence.values[i] < thresh) out.values[i] = 0.0f;
  }
  return out;
}

PairCheck check_pair(const DepthView& ref, int x, int y, double depth, const DepthView& neighbor,
                     const FusionConfig& config) {
  PairCheck r;
  const Eigen::Vector3d X = ref.camera.unproject(x, y, depth);
  const Eigen::Vector3d xn = neighbor.camera.K * neighbor.camera.world_to_camera(X);
  if (!(xn.z() > 0)) return r;
  const double u = xn.x() / xn.z();
  const double v = xn.y() / xn.z();
  BilinearTap tap;
  if (!bilinear_tap(u, v, neighbor.depth.width, neighbor.depth.height, tap)) return r;
  const int qx = static_cast<int>(std::lround(u));
  const int qy = static_cast<int>(std::lround(v));
  r.neighbor_pixel = qy * neighbor.depth.width + qx;
  double d_est = 0;
  for (int k = 0; k < 4; ++k) {
    if (tap.weight[k] == 0.0) continue;
    const double dk = neighbor.depth.values[static_cast<std::size_t>(tap.index[k])];
    if (!(dk > 0)) return r;
    d_est += tap.weight[k] * dk;
  }
  r.depth_error = std::abs(xn.z() - d_est) / d_est;
  const Eigen::Vector3d back = ref.camera.K * ref.camera.world_to_camera(neighbor.camera.unproject(u, v, d_est));
  if (!(back.z() > 0)) return r;
  r.reproj_error = std::hypot(back.x() / back.z() - x, back.y() / back.z() - y);
  r.consistent = r.depth_error < config.depth_tol && r.reproj_error < config.reproj_tol;
  return r;
}

std::vector<int> consistency_counts(const DepthView& ref, const std::vector<DepthView>& neighbors,
                                    const FusionConfig& config) {
  std::vector<int> counts(ref.depth.values.size(), 0);
  for (int y = 0; y < ref.depth.height; ++y)
    for (int x = 0; x < ref.depth.width; ++x) {
      const double d = ref.depth.at(x, y);
      if (!(d > 0)) continue;
      for (const auto& n : neighbors) {
        if (check_pair(ref, x, y, d, n, config).consistent) ++counts[y * ref.depth.width + x];
      }
    }
  return counts;
}

namespace {

Eigen::Vector3d color_at(const DepthView& view, int x, int y) {
  if (view.color.empty()) return Eigen::Vector3d::Zero();
  const double sx = static_cast<double>(view.color.width) / view.depth.width;
  const double sy = static_cast<double>(view.color.height) / view.depth.height;
  const int cx = std::clamp(static_cast<int>(std::lround(x * sx)), 0, view.color.width - 1);
  const int cy = std::clamp(static_cast<int>(std::lround(y * sy)), 0, view.color.height - 1);
  return {view.color.at(cx, cy, 0), view.color.at(cx, cy, 1), view.color.at(cx, cy, 2)};
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

PointCloud fuse(const std::vector<DepthView>& views, const FusionConfig& config,
                FusionReport* report) {
  config.validate();
  PointCloud cloud;
  if (static_cast<int>(views.size()) < config.min_views) {
    if (report) {
      report->warnings.push_back("fusion needs at least " + std::to_string(config.min_views) +
                                 " views, got " + std::to_string(views.size()));
    }
    return cloud;
  }
  // Neighbors per reference, skipping cameras that duplicate one already used.
  std::vector<std::vector<int>> neighbors(views.size());
  for (std::size_t r = 0; r < views.size(); ++r) {
    std::vector<const CameraView*> seen{&views[r].camera};
    for (std::size_t n = 0; n < views.size(); ++n) {
      if (n == r) continue;
      const bool dup = std::any_of(seen.begin(), seen.end(), [&](const CameraView* c) {
        return c->same_camera(views[n].camera, 1e-9);
      });
      if (dup) continue;
      seen.push_back(&views[n].camera);
      neighbors[r].push_back(static_cast<int>(n));
    }
  }

  std::vector<std::vector<std::uint8_t>> consumed(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) consumed[v].assign(views[v].depth.values.size(), 0);

  for (std::size_t r = 0; r < views.size(); ++r) {
    const DepthView& ref = views[r];
    for (int y = 0; y < ref.depth.height; ++y)
      for (int x = 0; x < ref.depth.width; ++x) {
        const int pix = y * ref.depth.width + x;
        const double d = ref.depth.at(x, y);
        if (consumed[r][pix] || !(d > 0)) continue;
        FusedPointSource src{static_cast<int>(r), pix, {}};
        for (int n : neighbors[r]) {
          const PairCheck c = check_pair(ref, x, y, d, views[n], config);
          if (c.consistent) src.neighbors.emplace_back(n, c.neighbor_pixel);
        }
        if (static_cast<int>(src.neighbors.size()) + 1 < config.min_views) continue;

        Eigen::Vector3d pos = ref.camera.unproject(x, y, d);
        Eigen::Vector3d rgb = color_at(ref, x, y);
        for (const auto& [n, q] : src.neighbors) {
          const DepthView& nv = views[n];
          const int qx = q % nv.depth.width;
          const int qy = q / nv.depth.width;
          pos += nv.camera.unproject(qx, qy, nv.depth.values[q]);
          rgb += color_at(nv, qx, qy);
          consumed[n][q] = 1;
        }
        consumed[r][pix] = 1;
        const double count = static_cast<double>(src.neighbors.size() + 1);
        pos /= count;
        rgb /= count;
        CloudPoint p;
        p.x = static_cast<float>(pos.x());
        p.y = static_cast<float>(pos.y());
        p.z = static_cast<float>(pos.z());
        p.r = to_byte(rgb.x());
        p.g = to_byte(rgb.y());
        p.b = to_byte(rgb.z());
        p.support = static_cast<int>(count);
        cloud.points.push_back(p);
        if (report) report->sources.push_back(std::move(src));
      }
  }
  return cloud;
}

template Map2D confidence_map(const Tensor<float>&, const Map2D&);
template Map2D confidence_map(const Tensor<double>&, const Map2D&);

}  // namespace cider
