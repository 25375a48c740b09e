#pragma once

#include <cstdint>

#include "cider/tensor.hpp"

namespace cider {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T scale);

/// max(x, 0); the subgradient at exactly 0 is taken as 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Numerically stabilized softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Sum of all elements, returned as a shape-{1} tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Weighted sum of all elements with constant weights (same shape as x).
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& weights);

/// Same data, new shape (element count must match).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

/// mean |a - b| over all elements. d|x|/dx at 0 is 0.
template <typename T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// mean |pred - target| over elements where mask != 0. target and mask are
/// treated as constants. Throws if the mask selects nothing.
template <typename T>
Tensor<T> masked_mean_abs_diff(const Tensor<T>& pred, const Tensor<T>& target,
                               const Tensor<T>& mask);

}  // namespace cider
