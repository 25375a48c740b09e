#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "cider/geometry.hpp"
#include "cider/layers.hpp"

namespace cider {

/// One regression branch of the filter: its logits [D,h,w] and the layer
/// index whose output it reads (12, 18 or 24).
template <typename T>
struct BranchLogits {
  int tap_row = 0;
  Tensor<T> logits;
};

/// 3D U-Net: three stride-2 convolutions (16/32/64 channels) mirrored by
/// three stride-2 deconvolutions with additive skips.
template <typename T>
class UNet3d {
 public:
  UNet3d() = default;
  UNet3d(ParameterSet<T>& params, std::mt19937_64& rng, const std::string& prefix);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  std::array<Shape, 6> trace(const Shape& input) const;

 private:
  std::array<ConvLayer<T>, 6> layers_;
};

/// Pre-filter residual block, one or two cascaded U-Nets and 1-channel
/// regression heads. With two U-Nets the heads tap rows 12, 18 and 24; with
/// one, only row 18.
template <typename T>
class CostFilter {
 public:
  CostFilter() = default;
  CostFilter(int in_channels, int unets, ParameterSet<T>& params, std::mt19937_64& rng,
             const std::string& prefix = "filter");

  /// volume: [C, D, h, w] with D divisible by 8 and h, w divisible by 8.
  std::vector<BranchLogits<T>> forward(const Tensor<T>& volume, bool training);

  int unets() const { return static_cast<int>(unets_.size()); }
  std::vector<int> tap_rows() const;

  /// Output shape of every layer (rows 9 to 27, absent rows skipped) as
  /// (row, shape) pairs.
  std::vector<std::pair<int, Shape>> trace(const Shape& volume) const;

 private:
  std::array<ConvLayer<T>, 4> pre_;
  std::vector<UNet3d<T>> unets_;
  std::vector<std::pair<int, ConvLayer<T>>> heads_;
};

/// Softmax over hypotheses, expected ordinal and its depth.
template <typename T>
struct Regression {
  Tensor<T> prob;     // [D, h, w]
  Tensor<T> ordinal;  // [h, w]
  Tensor<T> depth;    // [h, w]
};

/// k = sum_j j * prob[j]; prob: [D, h, w] -> [h, w].
template <typename T>
Tensor<T> expected_ordinal(const Tensor<T>& prob);

/// Elementwise hypotheses.ordinal_to_depth(k), differentiable in k.
template <typename T>
Tensor<T> ordinal_to_depth_map(const Tensor<T>& ordinal, const DepthHypothesisSet& hypotheses);

template <typename T>
Regression<T> regress(const Tensor<T>& logits, const DepthHypothesisSet& hypotheses);

/// sum_q weights[q] * mean over mask of |gt - preds[q]|.
template <typename T>
Tensor<T> depth_loss(const std::vector<Tensor<T>>& preds, const std::vector<double>& weights,
                     const Tensor<T>& gt, const Tensor<T>& mask);

extern template class UNet3d<float>;
extern template class UNet3d<double>;
extern template class CostFilter<float>;
extern template class CostFilter<double>;

}  // namespace cider
