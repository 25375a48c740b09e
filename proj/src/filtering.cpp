#include "cider/filtering.hpp"

#include <cmath>

#include "cider/ops.hpp"

namespace cider {

namespace {

LayerSpec conv3d_spec(int in, int out, int stride, bool bn = true, bool relu = true) {
  LayerSpec s;
  s.kind = LayerKind::Conv3d;
  s.in_channels = in;
  s.out_channels = out;
  s.stride = stride;
  s.batch_norm = bn;
  s.activation = relu ? Activation::Relu : Activation::None;
  return s;
}

LayerSpec deconv3d_spec(int in, int out) {
  LayerSpec s = conv3d_spec(in, out, 2);
  s.kind = LayerKind::Deconv3d;
  return s;
}

}  // namespace

template <typename T>
UNet3d<T>::UNet3d(ParameterSet<T>& params, std::mt19937_64& rng, const std::string& prefix) {
  const LayerSpec specs[6] = {conv3d_spec(8, 16, 2),  conv3d_spec(16, 32, 2), conv3d_spec(32, 64, 2),
                              deconv3d_spec(64, 32), deconv3d_spec(32, 16), deconv3d_spec(16, 8)};
  const char* names[6] = {"down1", "down2", "down3", "up1", "up2", "up3"};
  for (std::size_t i = 0; i < 6; ++i) {
    layers_[i] = ConvLayer<T>(prefix + "." + names[i], specs[i], params, rng);
  }
}

template <typename T>
Tensor<T> UNet3d<T>::forward(const Tensor<T>& x, bool training) {
  const Tensor<T> a = layers_[0].forward(x, training);
  const Tensor<T> b = layers_[1].forward(a, training);
  const Tensor<T> c = layers_[2].forward(b, training);
  const Tensor<T> e = add(layers_[3].forward(c, training), b);
  const Tensor<T> f = add(layers_[4].forward(e, training), a);
  return add(layers_[5].forward(f, training), x);
}

template <typename T>
std::array<Shape, 6> UNet3d<T>::trace(const Shape& input) const {
  std::array<Shape, 6> out;
  Shape s = input;
  for (std::size_t i = 0; i < 6; ++i) out[i] = s = layers_[i].output_shape(s);
  return out;
}

template <typename T>
CostFilter<T>::CostFilter(int in_channels, int unets, ParameterSet<T>& params,
                          std::mt19937_64& rng, const std::string& prefix) {
  if (unets != 1 && unets != 2) throw std::invalid_argument("cost filter supports 1 or 2 U-Nets");
  pre_[0] = ConvLayer<T>(prefix + ".conv9", conv3d_spec(in_channels, 8, 1), params, rng);
  pre_[1] = ConvLayer<T>(prefix + ".conv10", conv3d_spec(8, 8, 1), params, rng);
  pre_[2] = ConvLayer<T>(prefix + ".conv11", conv3d_spec(8, 8, 1), params, rng);
  pre_[3] = ConvLayer<T>(prefix + ".conv12", conv3d_spec(8, 8, 1, true, false), params, rng);
  for (int u = 0; u < unets; ++u) {
    unets_.emplace_back(params, rng, prefix + ".unet" + std::to_string(u + 1));
  }
  const std::vector<int> taps = unets == 2 ? std::vector<int>{12, 18, 24} : std::vector<int>{18};
  for (int tap : taps) {
    heads_.emplace_back(tap, ConvLayer<T>(prefix + ".head" + std::to_string(tap),
                                          conv3d_spec(8, 1, 1, false, false), params, rng));
  }
}

template <typename T>
std::vector<int> CostFilter<T>::tap_rows() const {
  std::vector<int> rows;
  for (const auto& h : heads_) rows.push_back(h.first);
  return rows;
}

template <typename T>
std::vector<BranchLogits<T>> CostFilter<T>::forward(const Tensor<T>& volume, bool training) {
  if (volume.ndim() != 4) {
    throw std::invalid_argument("cost filter expects a [C,D,h,w] volume, got " +
                                shape_string(volume.shape()));
  }
  for (std::size_t axis = 1; axis < 4; ++axis) {
    if (volume.dim(axis) % 8 != 0) {
      throw std::invalid_argument("cost volume extents " + shape_string(volume.shape()) +
                                  " must be divisible by 8 along D, h and w");
    }
  }
  const Tensor<T> r10 = pre_[1].forward(pre_[0].forward(volume, training), training);
  std::vector<Tensor<T>> taps{add(pre_[3].forward(pre_[2].forward(r10, training), training), r10)};
  for (auto& unet : unets_) taps.push_back(unet.forward(taps.back(), training));

  std::vector<BranchLogits<T>> out;
  for (auto& [row, head] : heads_) {
    const Tensor<T>& src = taps[static_cast<std::size_t>((row - 12) / 6)];
    const Tensor<T> y = head.forward(src, training);
    out.push_back({row, reshape(y, Shape(y.shape().begin() + 1, y.shape().end()))});
  }
  return out;
}

template <typename T>
std::vector<std::pair<int, Shape>> CostFilter<T>::trace(const Shape& volume) const {
  std::vector<std::pair<int, Shape>> rows;
  Shape s = volume;
  for (int i = 0; i < 4; ++i) {
    s = pre_[static_cast<std::size_t>(i)].output_shape(s);
    rows.emplace_back(9 + i, s);
  }
  std::vector<Shape> taps{s};
  int row = 13;
  for (const auto& unet : unets_) {
    for (const Shape& shape : unet.trace(taps.back())) rows.emplace_back(row++, shape);
    taps.push_back(rows.back().second);
  }
  for (const auto& [tap, head] : heads_) {
    rows.emplace_back(25 + (tap - 12) / 6, head.output_shape(taps[static_cast<std::size_t>((tap - 12) / 6)]));
  }
  return rows;
}

template <typename T>
Tensor<T> expected_ordinal(const Tensor<T>& prob) {
  if (prob.ndim() != 3) {
    throw std::invalid_argument("expected_ordinal expects [D,h,w], got " + shape_string(prob.shape()));
  }
  const std::int64_t D = prob.dim(0);
  const std::int64_t hw = prob.dim(1) * prob.dim(2);
  const auto p = prob.data();
  memory::Buffer<T> out(static_cast<std::size_t>(hw), T(0));
  for (std::int64_t j = 0; j < D; ++j)
    for (std::int64_t i = 0; i < hw; ++i) out[i] += static_cast<T>(j) * p[j * hw + i];
  return Tensor<T>::record({prob.dim(1), prob.dim(2)}, std::move(out), {prob},
                           [prob, D, hw](std::span<const T>, std::span<const T> g) {
                             auto acc = prob.grad_accumulator();
                             for (std::int64_t j = 0; j < D; ++j)
                               for (std::int64_t i = 0; i < hw; ++i)
                                 acc[j * hw + i] += static_cast<T>(j) * g[i];
                           });
}

template <typename T>
Tensor<T> ordinal_to_depth_map(const Tensor<T>& ordinal, const DepthHypothesisSet& hypotheses) {
  const auto k = ordinal.data();
  const double d_min = hypotheses.d_min();
  const double d_max = hypotheses.d_max();
  const double steps = hypotheses.size() - 1;
  const bool inverse = hypotheses.sampling() == DepthSampling::InverseDepth;
  memory::Buffer<T> out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) {
    out[i] = static_cast<T>(hypotheses.ordinal_to_depth(static_cast<double>(k[i])));
  }
  return Tensor<T>::record(
      ordinal.shape(), std::move(out), {ordinal},
      [ordinal, inverse, d_min, d_max, steps](std::span<const T> d, std::span<const T> g) {
        auto acc = ordinal.grad_accumulator();
        const double slope = inverse ? -(1.0 / d_min - 1.0 / d_max) / steps : (d_min - d_max) / steps;
        for (std::size_t i = 0; i < acc.size(); ++i) {
          const double dd = inverse ? slope * static_cast<double>(d[i]) * static_cast<double>(d[i]) : slope;
          acc[i] += g[i] * static_cast<T>(dd);
        }
      });
}

template <typename T>
Regression<T> regress(const Tensor<T>& logits, const DepthHypothesisSet& hypotheses) {
  if (logits.ndim() != 3 || logits.dim(0) != hypotheses.size()) {
    throw std::invalid_argument("regress: logits " + shape_string(logits.shape()) +
                                " do not match " + std::to_string(hypotheses.size()) +
                                " hypotheses");
  }
  Regression<T> r;
  r.prob = softmax(logits, 0);
  r.ordinal = expected_ordinal(r.prob);
  r.depth = ordinal_to_depth_map(r.ordinal, hypotheses);
  return r;
}

template <typename T>
Tensor<T> depth_loss(const std::vector<Tensor<T>>& preds, const std::vector<double>& weights,
                     const Tensor<T>& gt, const Tensor<T>& mask) {
  if (preds.empty() || preds.size() != weights.size()) {
    throw std::invalid_argument("depth_loss: need one weight per prediction");
  }
  Tensor<T> total;
  for (std::size_t q = 0; q < preds.size(); ++q) {
    Tensor<T> term = scalar_mul(masked_mean_abs_diff(preds[q], gt, mask), static_cast<T>(weights[q]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template class UNet3d<float>;
template class UNet3d<double>;
template class CostFilter<float>;
template class CostFilter<double>;

#define CIDER_INSTANTIATE_REGRESSION(T)                                                        \
  template Tensor<T> expected_ordinal(const Tensor<T>&);                                       \
  template Tensor<T> ordinal_to_depth_map(const Tensor<T>&, const DepthHypothesisSet&);        \
  template Regression<T> regress(const Tensor<T>&, const DepthHypothesisSet&);                 \
  template Tensor<T> depth_loss(const std::vector<Tensor<T>>&, const std::vector<double>&,     \
                                const Tensor<T>&, const Tensor<T>&);

CIDER_INSTANTIATE_REGRESSION(float)
CIDER_INSTANTIATE_REGRESSION(double)

}  // namespace cider
