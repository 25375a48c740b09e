#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cider/checkpoint.hpp"
#include "cider/feature.hpp"
#include "cider/filtering.hpp"
#include "cider/geometry.hpp"
#include "cider/image.hpp"

namespace cider {

/// Ablation variants. base: 32-channel variance volume, uniform depth, one
/// U-Net. agc: group correlation, uniform depth, one U-Net. agc-idr: group
/// correlation, inverse depth, one U-Net. cider: agc-idr with two U-Nets.
enum class Variant { Base, Agc, AgcIdr, Cider };

struct VariantTraits {
  bool correlation;
  DepthSampling sampling;
  int unets;
};

VariantTraits variant_traits(Variant v);
std::string variant_name(Variant v);
/// Throws std::invalid_argument on unknown names.
Variant parse_variant(const std::string& name);

struct NetworkConfig {
  Variant variant = Variant::Cider;
  int num_depth = 192;
  int groups = 8;
  std::vector<double> loss_weights{0.5, 0.5, 0.7};
  double learning_rate = 1e-3;
  double lr_decay = 0.9;
  std::int64_t lr_decay_interval = 10000;
  double rms_alpha = 0.9;
  double rms_eps = 1e-8;

  /// Throws std::invalid_argument unless D % 8 == 0 and G divides 32.
  void validate() const;
  /// Additionally requires H and W divisible by 32.
  void validate_image(int width, int height) const;
};

/// Step-decayed rate: lr * decay^floor(iteration / interval).
double learning_rate_at(const NetworkConfig& config, std::int64_t iteration);

/// Raised when a loss or activation becomes NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct ForwardResult {
  DepthHypothesisSet hypotheses{1.0, 2.0, 2, DepthSampling::InverseDepth};
  std::int64_t volume_elements = 0;
  std::vector<int> tap_rows;
  std::vector<Regression<T>> branches;

  const Regression<T>& final_branch() const { return branches.back(); }
};

struct TraceRow {
  std::string index;
  Shape shape;
};

template <typename T>
class Model {
 public:
  Model(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  void set_input_normalization(const std::vector<double>& mean, const std::vector<double>& stddev);
  Tensor<T> image_tensor(const Image& image) const;

  /// views[0] is the reference; every view carries its full-resolution image.
  /// Hypotheses span the reference depth range.
  ForwardResult<T> forward(const std::vector<CameraView>& views, bool training);

  /// Inference-mode forward without gradient recording.
  ForwardResult<T> infer(const std::vector<CameraView>& views);

  /// Output shape of every layer for a width x height input, rows "input",
  /// "1".."8", "volume", "9".."27".
  std::vector<TraceRow> trace(int width, int height) const;

  FeatureExtractor<T>& features() { return features_; }
  CostFilter<T>& filter() { return filter_; }

 private:
  NetworkConfig config_;
  ParameterSet<T> params_;
  FeatureExtractor<T> features_;
  CostFilter<T> filter_;
};

struct TrainingSample {
  std::vector<CameraView> views;
  Map2D gt_depth;  // reference depth at feature resolution; <= 0 marks invalid
};

struct StepResult {
  std::int64_t iteration = 0;  // index of the completed step, starting at 0
  double learning_rate = 0;
  double loss = 0;
  std::vector<double> branch_losses;
};

/// RMSprop over a model's trainable parameters.
template <typename T>
class Trainer {
 public:
  explicit Trainer(Model<T>& model);

  StepResult step(const TrainingSample& sample);
  /// Applies one update from the gradients currently held by the parameters.
  void apply_gradients();

  std::int64_t iteration() const { return iteration_; }
  void set_iteration(std::int64_t it) { iteration_ = it; }
  ParameterSet<T>& state() { return square_avg_; }
  const ParameterSet<T>& state() const { return square_avg_; }

 private:
  Model<T>& model_;
  ParameterSet<T> square_avg_;
  std::int64_t iteration_ = 0;
};

/// Model parameters (prefix "model."), optional optimizer state ("rmsprop.")
/// and configuration/iteration metadata ("meta.").
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const Trainer<T>* trainer = nullptr);

struct LoadedCheckpoint {
  NetworkConfig config;
  std::int64_t iteration = 0;
  std::vector<NamedArray> arrays;
};

LoadedCheckpoint read_model_checkpoint(const std::filesystem::path& path);

/// Restores parameters (and optimizer state when trainer is given).
template <typename T>
void restore_checkpoint(const LoadedCheckpoint& ckpt, Model<T>& model, Trainer<T>* trainer = nullptr);

extern template class Model<float>;
extern template class Model<double>;
extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace cider
