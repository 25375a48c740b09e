#include "cider/cost_volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cider {

bool bilinear_tap(double u, double v, std::int64_t width, std::int64_t height, BilinearTap& tap) {
  constexpr double kSlack = 1e-6;
  const double max_u = static_cast<double>(width - 1);
  const double max_v = static_cast<double>(height - 1);
  if (!(u >= -kSlack && u <= max_u + kSlack && v >= -kSlack && v <= max_v + kSlack)) return false;
  u = std::clamp(u, 0.0, max_u);
  v = std::clamp(v, 0.0, max_v);
  const auto x0 = static_cast<std::int64_t>(std::floor(u));
  const auto y0 = static_cast<std::int64_t>(std::floor(v));
  const double fx = u - static_cast<double>(x0);
  const double fy = v - static_cast<double>(y0);
  const std::int64_t x1 = std::min(x0 + 1, width - 1);
  const std::int64_t y1 = std::min(y0 + 1, height - 1);
  tap.index[0] = y0 * width + x0;
  tap.index[1] = y0 * width + x1;
  tap.index[2] = y1 * width + x0;
  tap.index[3] = y1 * width + x1;
  tap.weight[0] = (1 - fx) * (1 - fy);
  tap.weight[1] = fx * (1 - fy);
  tap.weight[2] = (1 - fx) * fy;
  tap.weight[3] = fx * fy;
  return true;
}

namespace {

template <typename T>
T sample(const T* plane, const BilinearTap& tap) {
  return static_cast<T>(tap.weight[0]) * plane[tap.index[0]] +
         static_cast<T>(tap.weight[1]) * plane[tap.index[1]] +
         static_cast<T>(tap.weight[2]) * plane[tap.index[2]] +
         static_cast<T>(tap.weight[3]) * plane[tap.index[3]];
}

template <typename T>
void scatter(T* plane, const BilinearTap& tap, T value) {
  for (int k = 0; k < 4; ++k) plane[tap.index[k]] += static_cast<T>(tap.weight[k]) * value;
}

template <typename T>
void require_feature(const Tensor<T>& f, const char* what) {
  if (f.ndim() != 3) {
    throw std::invalid_argument(std::string(what) + ": expected [C,h,w] feature, got " +
                                shape_string(f.shape()));
  }
}

void require_groups(std::int64_t channels, int groups) {
  if (groups <= 0 || channels % groups != 0) {
    throw std::invalid_argument("group count " + std::to_string(groups) + " does not divide " +
                                std::to_string(channels) + " channels");
  }
}

// Projection of every reference cell for one source view, evaluated lazily.
struct SweepGeometry {
  PixelProjector projector;
  std::vector<double> depths;
  std::int64_t width, height;

  bool tap(std::int64_t j, std::int64_t x, std::int64_t y, BilinearTap& out) const {
    const ProjectedPoint p = projector.project(static_cast<double>(x), static_cast<double>(y),
                                               depths[static_cast<std::size_t>(j)]);
    return p.valid && bilinear_tap(p.u, p.v, width, height, out);
  }
};

template <typename T>
std::vector<SweepGeometry> make_sweeps(const Tensor<T>& ref_feature,
                                       const std::vector<Tensor<T>>& src_features,
                                       const DepthHypothesisSet& hypotheses,
                                       const CameraView& ref_camera,
                                       const std::vector<CameraView>& src_cameras) {
  require_feature(ref_feature, "cost volume");
  if (src_features.empty()) throw std::invalid_argument("cost volume needs at least one source");
  if (src_features.size() != src_cameras.size()) {
    throw std::invalid_argument("cost volume: source feature and camera counts differ");
  }
  std::vector<SweepGeometry> sweeps;
  for (std::size_t i = 0; i < src_features.size(); ++i) {
    if (src_features[i].shape() != ref_feature.shape()) {
      throw std::invalid_argument("cost volume: source feature " + std::to_string(i) + " shape " +
                                  shape_string(src_features[i].shape()) + " differs from " +
                                  shape_string(ref_feature.shape()));
    }
    sweeps.push_back({PixelProjector(ref_camera, src_cameras[i]), hypotheses.depths(),
                      ref_feature.dim(2), ref_feature.dim(1)});
  }
  return sweeps;
}

}  // namespace

template <typename T>
WarpedFeature<T> warp(const Tensor<T>& src_feature, const DepthHypothesisSet& hypotheses,
                      const CameraView& ref, const CameraView& src) {
  require_feature(src_feature, "warp");
  const std::int64_t C = src_feature.dim(0);
  const std::int64_t h = src_feature.dim(1);
  const std::int64_t w = src_feature.dim(2);
  const std::int64_t D = hypotheses.size();
  const std::int64_t hw = h * w;
  const SweepGeometry sweep{PixelProjector(ref, src), hypotheses.depths(), w, h};

  WarpedFeature<T> result;
  result.valid.assign(static_cast<std::size_t>(D * hw), 0);
  std::vector<BilinearTap> taps(static_cast<std::size_t>(D * hw));
  for (std::int64_t j = 0; j < D; ++j)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t cell = j * hw + y * w + x;
        result.valid[cell] = sweep.tap(j, x, y, taps[cell]) ? 1 : 0;
      }

  const T* f = src_feature.data().data();
  memory::Buffer<T> out(static_cast<std::size_t>(C * D * hw), T(0));
  for (std::int64_t c = 0; c < C; ++c) {
    const T* plane = f + c * hw;
    T* dst = out.data() + c * D * hw;
    for (std::int64_t cell = 0; cell < D * hw; ++cell) {
      if (result.valid[cell]) dst[cell] = sample(plane, taps[cell]);
    }
  }

  auto valid = result.valid;
  result.features = Tensor<T>::record(
      {C, D, h, w}, std::move(out), {src_feature},
      [src_feature, taps = std::move(taps), valid = std::move(valid), C, D, hw](
          std::span<const T>, std::span<const T> grad) {
        auto acc = src_feature.grad_accumulator();
        for (std::int64_t c = 0; c < C; ++c) {
          T* plane = acc.data() + c * hw;
          const T* g = grad.data() + c * D * hw;
          for (std::int64_t cell = 0; cell < D * hw; ++cell) {
            if (valid[cell]) scatter(plane, taps[cell], g[cell]);
          }
        }
      });
  return result;
}

template <typename T>
Tensor<T> group_correlation(const Tensor<T>& ref_feature, const Tensor<T>& warped, int groups) {
  require_feature(ref_feature, "group_correlation");
  if (warped.ndim() != 4 || warped.dim(0) != ref_feature.dim(0) ||
      warped.dim(2) != ref_feature.dim(1) || warped.dim(3) != ref_feature.dim(2)) {
    throw std::invalid_argument("group_correlation: warped shape " + shape_string(warped.shape()) +
                                " incompatible with reference " +
                                shape_string(ref_feature.shape()));
  }
  const std::int64_t C = ref_feature.dim(0);
  require_groups(C, groups);
  const std::int64_t D = warped.dim(1);
  const std::int64_t hw = ref_feature.dim(1) * ref_feature.dim(2);
  const std::int64_t per_group = C / groups;
  const T coef = T(1) / static_cast<T>(per_group);
  const T* r = ref_feature.data().data();
  const T* f = warped.data().data();

  memory::Buffer<T> out(static_cast<std::size_t>(groups * D * hw), T(0));
  for (std::int64_t g = 0; g < groups; ++g)
    for (std::int64_t j = 0; j < D; ++j) {
      T* dst = out.data() + (g * D + j) * hw;
      for (std::int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
        const T* rc = r + c * hw;
        const T* fc = f + (c * D + j) * hw;
        for (std::int64_t p = 0; p < hw; ++p) dst[p] += rc[p] * fc[p];
      }
      for (std::int64_t p = 0; p < hw; ++p) dst[p] *= coef;
    }

  return Tensor<T>::record(
      {groups, D, ref_feature.dim(1), ref_feature.dim(2)}, std::move(out), {ref_feature, warped},
      [ref_feature, warped, groups, per_group, coef, D, hw](std::span<const T>,
                                                             std::span<const T> grad) {
        const T* r = ref_feature.data().data();
        const T* f = warped.data().data();
        T* dr = ref_feature.requires_grad() ? ref_feature.grad_accumulator().data() : nullptr;
        T* df = warped.requires_grad() ? warped.grad_accumulator().data() : nullptr;
        for (std::int64_t g = 0; g < groups; ++g)
          for (std::int64_t j = 0; j < D; ++j) {
            const T* go = grad.data() + (g * D + j) * hw;
            for (std::int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
              for (std::int64_t p = 0; p < hw; ++p) {
                const T s = coef * go[p];
                if (dr) dr[c * hw + p] += s * f[(c * D + j) * hw + p];
                if (df) df[(c * D + j) * hw + p] += s * r[c * hw + p];
              }
            }
          }
      });
}

template <typename T>
Tensor<T> average_volumes(const std::vector<Tensor<T>>& volumes) {
  if (volumes.empty()) throw std::invalid_argument("average_volumes: empty volume list");
  const Shape& shape = volumes.front().shape();
  for (const auto& v : volumes) {
    if (v.shape() != shape) {
      throw std::invalid_argument("average_volumes: shape mismatch " + shape_string(v.shape()) +
                                  " vs " + shape_string(shape));
    }
  }
  const T scale = T(1) / static_cast<T>(volumes.size());
  memory::Buffer<T> out(volumes.front().data().begin(), volumes.front().data().end());
  for (std::size_t i = 1; i < volumes.size(); ++i) {
    const auto d = volumes[i].data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += d[k];
  }
  for (auto& v : out) v *= scale;
  return Tensor<T>::record(shape, std::move(out), volumes,
                           [volumes, scale](std::span<const T>, std::span<const T> grad) {
                             for (const auto& v : volumes) {
                               if (!v.requires_grad()) continue;
                               auto acc = v.grad_accumulator();
                               for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += scale * grad[k];
                             }
                           });
}

template <typename T>
Tensor<T> variance_volume(const Tensor<T>& ref_feature, const std::vector<Tensor<T>>& warped) {
  require_feature(ref_feature, "variance_volume");
  if (warped.empty()) throw std::invalid_argument("variance_volume: needs at least one source");
  const std::int64_t C = ref_feature.dim(0);
  const std::int64_t hw = ref_feature.dim(1) * ref_feature.dim(2);
  const std::int64_t D = warped.front().ndim() == 4 ? warped.front().dim(1) : 0;
  const Shape shape{C, D, ref_feature.dim(1), ref_feature.dim(2)};
  for (const auto& w : warped) {
    if (w.shape() != shape) {
      throw std::invalid_argument("variance_volume: warped shape " + shape_string(w.shape()) +
                                  " expected " + shape_string(shape));
    }
  }
  const T n = static_cast<T>(warped.size() + 1);
  const T* r = ref_feature.data().data();
  memory::Buffer<T> out(static_cast<std::size_t>(C * D * hw));
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t j = 0; j < D; ++j)
      for (std::int64_t p = 0; p < hw; ++p) {
        const std::int64_t idx = (c * D + j) * hw + p;
        const T x0 = r[c * hw + p];
        T mean = x0;
        for (const auto& w : warped) mean += w.data()[idx];
        mean /= n;
        T var = (x0 - mean) * (x0 - mean);
        for (const auto& w : warped) {
          const T d = w.data()[idx] - mean;
          var += d * d;
        }
        out[idx] = var / n;
      }

  std::vector<Tensor<T>> inputs{ref_feature};
  inputs.insert(inputs.end(), warped.begin(), warped.end());
  return Tensor<T>::record(
      shape, std::move(out), inputs,
      [ref_feature, warped, C, D, hw, n](std::span<const T>, std::span<const T> grad) {
        const T* r = ref_feature.data().data();
        T* dr = ref_feature.requires_grad() ? ref_feature.grad_accumulator().data() : nullptr;
        std::vector<T*> dw;
        for (const auto& w : warped) dw.push_back(w.requires_grad() ? w.grad_accumulator().data() : nullptr);
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t j = 0; j < D; ++j)
            for (std::int64_t p = 0; p < hw; ++p) {
              const std::int64_t idx = (c * D + j) * hw + p;
              const T x0 = r[c * hw + p];
              T mean = x0;
              for (const auto& w : warped) mean += w.data()[idx];
              mean /= n;
              const T k = T(2) * grad[idx] / n;
              if (dr) dr[c * hw + p] += k * (x0 - mean);
              for (std::size_t i = 0; i < warped.size(); ++i) {
                if (dw[i]) dw[i][idx] += k * (warped[i].data()[idx] - mean);
              }
            }
      });
}

template <typename T>
Tensor<T> build_correlation_volume(const Tensor<T>& ref_feature,
                                   const std::vector<Tensor<T>>& src_features,
                                   const DepthHypothesisSet& hypotheses,
                                   const CameraView& ref_camera,
                                   const std::vector<CameraView>& src_cameras, int groups) {
  auto sweeps = make_sweeps(ref_feature, src_features, hypotheses, ref_camera, src_cameras);
  const std::int64_t C = ref_feature.dim(0);
  require_groups(C, groups);
  const std::int64_t h = ref_feature.dim(1);
  const std::int64_t w = ref_feature.dim(2);
  const std::int64_t hw = h * w;
  const std::int64_t D = hypotheses.size();
  const std::int64_t per_group = C / groups;
  const T coef = T(1) / (static_cast<T>(per_group) * static_cast<T>(src_features.size()));
  const T* r = ref_feature.data().data();

  memory::Buffer<T> out(static_cast<std::size_t>(groups * D * hw), T(0));
  BilinearTap tap;
  for (std::size_t i = 0; i < sweeps.size(); ++i) {
    const T* f = src_features[i].data().data();
    for (std::int64_t j = 0; j < D; ++j)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          if (!sweeps[i].tap(j, x, y, tap)) continue;
          const std::int64_t p = y * w + x;
          for (std::int64_t g = 0; g < groups; ++g) {
            T acc = 0;
            for (std::int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
              acc += r[c * hw + p] * sample(f + c * hw, tap);
            }
            out[(g * D + j) * hw + p] += coef * acc;
          }
        }
  }

  std::vector<Tensor<T>> inputs{ref_feature};
  inputs.insert(inputs.end(), src_features.begin(), src_features.end());
  return Tensor<T>::record(
      {groups, D, h, w}, std::move(out), inputs,
      [ref_feature, src_features, sweeps = std::move(sweeps), groups, per_group, coef, D, h, w](
          std::span<const T>, std::span<const T> grad) {
        const std::int64_t hw = h * w;
        const T* r = ref_feature.data().data();
        T* dr = ref_feature.requires_grad() ? ref_feature.grad_accumulator().data() : nullptr;
        BilinearTap tap;
        for (std::size_t i = 0; i < sweeps.size(); ++i) {
          const T* f = src_features[i].data().data();
          T* df = src_features[i].requires_grad() ? src_features[i].grad_accumulator().data()
                                                  : nullptr;
          for (std::int64_t j = 0; j < D; ++j)
            for (std::int64_t y = 0; y < h; ++y)
              for (std::int64_t x = 0; x < w; ++x) {
                if (!sweeps[i].tap(j, x, y, tap)) continue;
                const std::int64_t p = y * w + x;
                for (std::int64_t g = 0; g < groups; ++g) {
                  const T go = coef * grad[(g * D + j) * hw + p];
                  if (go == T(0)) continue;
                  for (std::int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
                    if (dr) dr[c * hw + p] += go * sample(f + c * hw, tap);
                    if (df) scatter(df + c * hw, tap, go * r[c * hw + p]);
                  }
                }
              }
        }
      });
}

template <typename T>
Tensor<T> build_variance_volume(const Tensor<T>& ref_feature,
                                const std::vector<Tensor<T>>& src_features,
                                const DepthHypothesisSet& hypotheses, const CameraView& ref_camera,
                                const std::vector<CameraView>& src_cameras) {
  auto sweeps = make_sweeps(ref_feature, src_features, hypotheses, ref_camera, src_cameras);
  const std::int64_t C = ref_feature.dim(0);
  const std::int64_t h = ref_feature.dim(1);
  const std::int64_t w = ref_feature.dim(2);
  const std::int64_t hw = h * w;
  const std::int64_t D = hypotheses.size();
  const std::size_t S = sweeps.size();
  const T n = static_cast<T>(S + 1);
  const T* r = ref_feature.data().data();

  memory::Buffer<T> out(static_cast<std::size_t>(C * D * hw), T(0));
  std::vector<BilinearTap> taps(S);
  std::vector<std::uint8_t> hit(S);
  for (std::int64_t j = 0; j < D; ++j)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t p = y * w + x;
        for (std::size_t i = 0; i < S; ++i) hit[i] = sweeps[i].tap(j, x, y, taps[i]) ? 1 : 0;
        for (std::int64_t c = 0; c < C; ++c) {
          const T x0 = r[c * hw + p];
          T mean = x0;
          for (std::size_t i = 0; i < S; ++i)
            if (hit[i]) mean += sample(src_features[i].data().data() + c * hw, taps[i]);
          mean /= n;
          T var = (x0 - mean) * (x0 - mean);
          for (std::size_t i = 0; i < S; ++i) {
            const T v = hit[i] ? sample(src_features[i].data().data() + c * hw, taps[i]) : T(0);
            var += (v - mean) * (v - mean);
          }
          out[(c * D + j) * hw + p] = var / n;
        }
      }

  std::vector<Tensor<T>> inputs{ref_feature};
  inputs.insert(inputs.end(), src_features.begin(), src_features.end());
  return Tensor<T>::record(
      {C, D, h, w}, std::move(out), inputs,
      [ref_feature, src_features, sweeps = std::move(sweeps), C, D, h, w, n](
          std::span<const T>, std::span<const T> grad) {
        const std::int64_t hw = h * w;
        const std::size_t S = sweeps.size();
        const T* r = ref_feature.data().data();
        T* dr = ref_feature.requires_grad() ? ref_feature.grad_accumulator().data() : nullptr;
        std::vector<T*> df(S, nullptr);
        for (std::size_t i = 0; i < S; ++i)
          if (src_features[i].requires_grad()) df[i] = src_features[i].grad_accumulator().data();
        std::vector<BilinearTap> taps(S);
        std::vector<std::uint8_t> hit(S);
        std::vector<T> values(S);
        for (std::int64_t j = 0; j < D; ++j)
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
              const std::int64_t p = y * w + x;
              for (std::size_t i = 0; i < S; ++i) hit[i] = sweeps[i].tap(j, x, y, taps[i]) ? 1 : 0;
              for (std::int64_t c = 0; c < C; ++c) {
                const T x0 = r[c * hw + p];
                T mean = x0;
                for (std::size_t i = 0; i < S; ++i) {
                  values[i] = hit[i] ? sample(src_features[i].data().data() + c * hw, taps[i]) : T(0);
                  mean += values[i];
                }
                mean /= n;
                const T k = T(2) * grad[(c * D + j) * hw + p] / n;
                if (dr) dr[c * hw + p] += k * (x0 - mean);
                for (std::size_t i = 0; i < S; ++i) {
                  if (hit[i] && df[i]) scatter(df[i] + c * hw, taps[i], k * (values[i] - mean));
                }
              }
            }
      });
}

template <typename T>
void write_volume_slice(const std::filesystem::path& path, const Tensor<T>& volume,
                        std::int64_t depth_index) {
  if (volume.ndim() != 4) throw std::invalid_argument("write_volume_slice expects [C,D,h,w]");
  const std::int64_t C = volume.dim(0), D = volume.dim(1), h = volume.dim(2), w = volume.dim(3);
  if (depth_index < 0 || depth_index >= D) throw std::out_of_range("depth slice out of range");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  auto put = [&os](auto v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  os.write("CVSL", 4);
  put(static_cast<std::uint32_t>(std::is_same_v<T, float> ? 0 : 1));
  put(static_cast<std::uint32_t>(3));
  for (std::int64_t e : {C, h, w}) put(static_cast<std::uint64_t>(e));
  const auto data = volume.data();
  for (std::int64_t c = 0; c < C; ++c) {
    os.write(reinterpret_cast<const char*>(data.data() + (c * D + depth_index) * h * w),
             static_cast<std::streamsize>(h * w * sizeof(T)));
  }
}

#define CIDER_INSTANTIATE_COST_VOLUME(T)                                                        \
  template WarpedFeature<T> warp(const Tensor<T>&, const DepthHypothesisSet&, const CameraView&, \
                                 const CameraView&);                                            \
  template Tensor<T> group_correlation(const Tensor<T>&, const Tensor<T>&, int);                \
  template Tensor<T> average_volumes(const std::vector<Tensor<T>>&);                            \
  template Tensor<T> variance_volume(const Tensor<T>&, const std::vector<Tensor<T>>&);          \
  template Tensor<T> build_correlation_volume(const Tensor<T>&, const std::vector<Tensor<T>>&,  \
                                              const DepthHypothesisSet&, const CameraView&,     \
                                              const std::vector<CameraView>&, int);             \
  template Tensor<T> build_variance_volume(const Tensor<T>&, const std::vector<Tensor<T>>&,     \
                                           const DepthHypothesisSet&, const CameraView&,        \
                                           const std::vector<CameraView>&);                     \
  template void write_volume_slice(const std::filesystem::path&, const Tensor<T>&, std::int64_t);

CIDER_INSTANTIATE_COST_VOLUME(float)
CIDER_INSTANTIATE_COST_VOLUME(double)

}  // namespace cider
