#pragma once

#include <cstdint>

#include "cider/tensor.hpp"

namespace cider {

/// Isotropic stride/padding applied to every spatial axis.
struct ConvOptions {
  int stride = 1;
  int padding = 0;
  // Transposed convolution only: extra extent added on the high side so
  // stride-2 layers exactly double their input.
  int output_padding = 0;
};

/// Output shape of conv2d/conv3d (transposed = false) or deconv3d
/// (transposed = true). Validates ranks, channel counts and kernel extents and
/// throws std::invalid_argument with the offending shapes on mismatch.
Shape conv_output_shape(const Shape& input, const Shape& weight, const ConvOptions& options,
                        bool transposed);

/// x: [C,H,W], weight: [O,C,k,k], bias: [O] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvOptions& options);

/// x: [C,D,H,W], weight: [O,C,k,k,k], bias: [O] or undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvOptions& options);

/// Transposed 3D convolution, the adjoint of conv3d with the same kernel.
/// x: [Cin,D,H,W], weight: [Cin,Cout,k,k,k] (the layout of the conv3d it is
/// the adjoint of), bias: [Cout] or undefined.
template <typename T>
Tensor<T> deconv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                   const ConvOptions& options);

/// Per-channel batch normalization over all non-channel axes of x: [C,...].
///
/// Training mode normalizes with the batch statistics and folds them into the
/// running estimates: running = momentum * running + (1 - momentum) * batch
/// (unbiased variance). Inference mode uses the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                     T epsilon);

}  // namespace cider
