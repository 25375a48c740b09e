#pragma once

#include <random>
#include <string>
#include <vector>

#include "cider/conv.hpp"
#include "cider/tensor.hpp"

namespace cider {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Named tensors owned by a network: trainable parameters plus buffers
/// (BN running statistics, input normalization) that travel in checkpoints.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> tensor, bool trainable);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  /// nullptr when absent.
  Tensor<T>* find(const std::string& name);
  const Tensor<T>* find(const std::string& name) const;

  std::vector<Tensor<T>> trainable() const;
  std::int64_t trainable_count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

enum class LayerKind { Conv2d, Conv3d, Deconv3d };
enum class Activation { None, Relu };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv3d;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  bool batch_norm = true;
  Activation activation = Activation::Relu;
};

/// Convolution (2D/3D) or stride-2 transposed 3D convolution followed by
/// optional batch norm and ReLU. Padding is always kernel/2 ("same"), so
/// stride 1 preserves extents and stride 2 halves them (or doubles, for the
/// transposed case via output_padding = stride - 1).
template <typename T>
class ConvLayer {
 public:
  ConvLayer() = default;
  ConvLayer(const std::string& name, const LayerSpec& spec, ParameterSet<T>& params,
            std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Shape output_shape(const Shape& input) const;

  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  ConvOptions options() const;

  Tensor<T> weight, bias, gamma, beta, running_mean, running_var;

 private:
  std::string name_;
  LayerSpec spec_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class ConvLayer<float>;
extern template class ConvLayer<double>;

}  // namespace cider
