#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cider/geometry.hpp"
#include "cider/tensor.hpp"

namespace cider {

/// Bilinear footprint of a continuous sample position in a width x height
/// grid. Positions outside [0, w-1] x [0, h-1] (with a 1e-6 slack that
/// absorbs round-off on exact border hits) are rejected.
struct BilinearTap {
  std::int64_t index[4];
  double weight[4];
};

bool bilinear_tap(double u, double v, std::int64_t width, std::int64_t height, BilinearTap& tap);

/// Source features resampled onto the reference grid for every hypothesis.
template <typename T>
struct WarpedFeature {
  Tensor<T> features;               // [C, D, h, w]
  std::vector<std::uint8_t> valid;  // [D, h, w]; invalid cells hold zero features
};

/// Differentiable plane-sweep warp. Cameras must already be expressed at the
/// feature resolution (see CameraView::scaled). Gradients flow to
/// `src_feature` only; sample positions are constants.
template <typename T>
WarpedFeature<T> warp(const Tensor<T>& src_feature, const DepthHypothesisSet& hypotheses,
                      const CameraView& ref, const CameraView& src);

/// Group-wise correlation between ref [C,h,w] and warped [C,D,h,w]:
/// out[g,j,p] = (G/C) * sum over channels c of group g of ref[c,p]*warped[c,j,p].
template <typename T>
Tensor<T> group_correlation(const Tensor<T>& ref_feature, const Tensor<T>& warped, int groups);

/// Elementwise mean of equally shaped volumes, summed in list order.
template <typename T>
Tensor<T> average_volumes(const std::vector<Tensor<T>>& volumes);

/// Per-channel population variance across {ref, warped_1..warped_{N-1}},
/// with ref [C,h,w] broadcast along depth. Output [C,D,h,w].
template <typename T>
Tensor<T> variance_volume(const Tensor<T>& ref_feature, const std::vector<Tensor<T>>& warped);

/// Streaming equivalent of average_volumes(group_correlation(ref, warp(src_i)))
/// that never materializes warped features: only the G-channel output is
/// allocated. Backward recomputes the bilinear taps.
template <typename T>
Tensor<T> build_correlation_volume(const Tensor<T>& ref_feature,
                                   const std::vector<Tensor<T>>& src_features,
                                   const DepthHypothesisSet& hypotheses,
                                   const CameraView& ref_camera,
                                   const std::vector<CameraView>& src_cameras, int groups);

/// Streaming equivalent of variance_volume(ref, {warp(src_i)}).
template <typename T>
Tensor<T> build_variance_volume(const Tensor<T>& ref_feature,
                                const std::vector<Tensor<T>>& src_features,
                                const DepthHypothesisSet& hypotheses, const CameraView& ref_camera,
                                const std::vector<CameraView>& src_cameras);

/// Debug dump of one depth slice [C, h, w] of a [C, D, h, w] volume:
/// "CVSL" u32 dtype(0=f32,1=f64) u32 rank=3 u64 C u64 h u64 w, then data.
template <typename T>
void write_volume_slice(const std::filesystem::path& path, const Tensor<T>& volume,
                        std::int64_t depth_index);

}  // namespace cider
