#include "cider/feature.hpp"

namespace cider {

namespace {

LayerSpec conv2d_spec(int in, int out, int kernel, int stride, bool bn_relu = true) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.batch_norm = bn_relu;
  s.activation = bn_relu ? Activation::Relu : Activation::None;
  return s;
}

}  // namespace

template <typename T>
FeatureExtractor<T>::FeatureExtractor(ParameterSet<T>& params, std::mt19937_64& rng,
                                      const std::string& prefix) {
  const LayerSpec specs[kLayers] = {
      conv2d_spec(3, 8, 3, 1),   conv2d_spec(8, 8, 3, 1),   conv2d_spec(8, 16, 5, 2),
      conv2d_spec(16, 16, 3, 1), conv2d_spec(16, 16, 3, 1), conv2d_spec(16, 32, 5, 2),
      conv2d_spec(32, 32, 3, 1), conv2d_spec(32, 32, 3, 1, false),
  };
  for (int i = 0; i < kLayers; ++i) {
    layers_[static_cast<std::size_t>(i)] =
        ConvLayer<T>(prefix + ".conv" + std::to_string(i + 1), specs[i], params, rng);
  }
}

template <typename T>
Tensor<T> FeatureExtractor<T>::forward(const Tensor<T>& image, bool training) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("feature extractor expects a [3,H,W] image, got " +
                                shape_string(image.shape()));
  }
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0) {
    throw std::invalid_argument("image extents " + shape_string(image.shape()) +
                                " are not divisible by 4");
  }
  Tensor<T> x = image;
  for (auto& layer : layers_) x = layer.forward(x, training);
  return x;
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;

}  // namespace cider
