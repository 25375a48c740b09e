#pragma once

#include <array>
#include <random>
#include <string>

#include "cider/layers.hpp"

namespace cider {

/// Shared-weight 2D CNN: 3 x H x W image to a 32 x H/4 x W/4 feature.
template <typename T>
class FeatureExtractor {
 public:
  static constexpr int kLayers = 8;
  static constexpr int kChannels = 32;

  FeatureExtractor() = default;
  FeatureExtractor(ParameterSet<T>& params, std::mt19937_64& rng, const std::string& prefix = "feature");

  /// image: [3, H, W], already normalized. H and W must be divisible by 4.
  Tensor<T> forward(const Tensor<T>& image, bool training);

  ConvLayer<T>& layer(int i) { return layers_.at(static_cast<std::size_t>(i)); }
  const ConvLayer<T>& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }

 private:
  std::array<ConvLayer<T>, kLayers> layers_;
};

extern template class FeatureExtractor<float>;
extern template class FeatureExtractor<double>;

}  // namespace cider
