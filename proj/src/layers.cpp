#include "cider/layers.hpp"

#include <cmath>

#include "cider/ops.hpp"

namespace cider {

template <typename T>
Tensor<T>& ParameterSet<T>::add(const std::string& name, Tensor<T> tensor, bool trainable) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name " + name);
  tensor.set_requires_grad(trainable);
  entries_.push_back({name, std::move(tensor), trainable});
  return entries_.back().tensor;
}

template <typename T>
Tensor<T>* ParameterSet<T>::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

template <typename T>
const Tensor<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

template <typename T>
std::int64_t ParameterSet<T>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
ConvLayer<T>::ConvLayer(const std::string& name, const LayerSpec& spec, ParameterSet<T>& params,
                        std::mt19937_64& rng)
    : name_(name), spec_(spec) {
  if (spec.kernel <= 0 || spec.kernel % 2 == 0) {
    throw std::invalid_argument(name + ": kernel extent must be odd");
  }
  if (spec.in_channels <= 0 || spec.out_channels <= 0) {
    throw std::invalid_argument(name + ": channel counts must be positive");
  }
  const std::int64_t k = spec.kernel;
  const std::int64_t in = spec.in_channels;
  const std::int64_t out = spec.out_channels;
  Shape wshape;
  std::int64_t fan_in = 0;
  switch (spec.kind) {
    case LayerKind::Conv2d:
      wshape = {out, in, k, k};
      fan_in = in * k * k;
      break;
    case LayerKind::Conv3d:
      wshape = {out, in, k, k, k};
      fan_in = in * k * k * k;
      break;
    case LayerKind::Deconv3d:
      wshape = {in, out, k, k, k};
      fan_in = in * k * k * k;
      break;
  }
  // He initialization.
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  weight = params.add(name + ".weight", Tensor<T>::randn(wshape, rng, stddev), true);
  bias = params.add(name + ".bias", Tensor<T>::zeros({out}), true);
  if (spec.batch_norm) {
    gamma = params.add(name + ".bn.gamma", Tensor<T>::full({out}, T(1)), true);
    beta = params.add(name + ".bn.beta", Tensor<T>::zeros({out}), true);
    running_mean = params.add(name + ".bn.running_mean", Tensor<T>::zeros({out}), false);
    running_var = params.add(name + ".bn.running_var", Tensor<T>::full({out}, T(1)), false);
  }
}

template <typename T>
ConvOptions ConvLayer<T>::options() const {
  ConvOptions opt;
  opt.stride = spec_.stride;
  opt.padding = spec_.kernel / 2;
  opt.output_padding = spec_.kind == LayerKind::Deconv3d ? spec_.stride - 1 : 0;
  return opt;
}

template <typename T>
Shape ConvLayer<T>::output_shape(const Shape& input) const {
  return conv_output_shape(input, weight.shape(), options(), spec_.kind == LayerKind::Deconv3d);
}

template <typename T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y;
  try {
    switch (spec_.kind) {
      case LayerKind::Conv2d:
        y = conv2d(x, weight, bias, options());
        break;
      case LayerKind::Conv3d:
        y = conv3d(x, weight, bias, options());
        break;
      case LayerKind::Deconv3d:
        y = deconv3d(x, weight, bias, options());
        break;
    }
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(name_ + ": " + e.what());
  }
  if (spec_.batch_norm) {
    y = batch_norm(y, gamma, beta, running_mean, running_var, training,
                   static_cast<T>(kBatchNormMomentum), static_cast<T>(kBatchNormEpsilon));
  }
  if (spec_.activation == Activation::Relu) y = relu(y);
  return y;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class ConvLayer<float>;
template class ConvLayer<double>;

}  // namespace cider
