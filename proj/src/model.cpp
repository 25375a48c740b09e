#include "cider/model.hpp"

#include <cmath>

#include "cider/cost_volume.hpp"
#include "cider/ops.hpp"

namespace cider {

VariantTraits variant_traits(Variant v) {
  switch (v) {
    case Variant::Base:
      return {false, DepthSampling::UniformDepth, 1};
    case Variant::Agc:
      return {true, DepthSampling::UniformDepth, 1};
    case Variant::AgcIdr:
      return {true, DepthSampling::InverseDepth, 1};
    case Variant::Cider:
      return {true, DepthSampling::InverseDepth, 2};
  }
  throw std::invalid_argument("unknown variant");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Base:
      return "base";
    case Variant::Agc:
      return "agc";
    case Variant::AgcIdr:
      return "agc-idr";
    case Variant::Cider:
      return "cider";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::Base, Variant::Agc, Variant::AgcIdr, Variant::Cider}) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + name + "' (expected base, agc, agc-idr or cider)");
}

void NetworkConfig::validate() const {
  if (num_depth < 8 || num_depth % 8 != 0) {
    throw std::invalid_argument("hypothesis count " + std::to_string(num_depth) +
                                " must be a positive multiple of 8");
  }
  if (groups <= 0 || 32 % groups != 0) {
    throw std::invalid_argument("group count " + std::to_string(groups) + " must divide 32");
  }
  if (loss_weights.size() != 3) throw std::invalid_argument("expected three loss weights");
  for (double w : loss_weights) {
    if (!(w >= 0)) throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(learning_rate > 0) || !(lr_decay > 0) || lr_decay_interval <= 0) {
    throw std::invalid_argument("learning-rate schedule must be positive");
  }
}

void NetworkConfig::validate_image(int width, int height) const {
  validate();
  if (width <= 0 || height <= 0 || width % 32 != 0 || height % 32 != 0) {
    throw std::invalid_argument("image size " + std::to_string(width) + "x" +
                                std::to_string(height) + " must be divisible by 32");
  }
}

double learning_rate_at(const NetworkConfig& config, std::int64_t iteration) {
  return config.learning_rate *
         std::pow(config.lr_decay, static_cast<double>(iteration / config.lr_decay_interval));
}

template <typename T>
Model<T>::Model(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  params_.add("input.mean", Tensor<T>::zeros({3}), false);
  params_.add("input.std", Tensor<T>::full({3}, T(1)), false);
  features_ = FeatureExtractor<T>(params_, rng);
  const VariantTraits traits = variant_traits(config_.variant);
  const int in_channels = traits.correlation ? config_.groups : FeatureExtractor<T>::kChannels;
  filter_ = CostFilter<T>(in_channels, traits.unets, params_, rng);
}

template <typename T>
void Model<T>::set_input_normalization(const std::vector<double>& mean,
                                       const std::vector<double>& stddev) {
  if (mean.size() != 3 || stddev.size() != 3) throw std::invalid_argument("expected 3 channels");
  auto m = params_.find("input.mean")->mutable_data();
  auto s = params_.find("input.std")->mutable_data();
  for (int c = 0; c < 3; ++c) {
    if (!(stddev[c] > 0)) throw std::invalid_argument("input std must be positive");
    m[c] = static_cast<T>(mean[c]);
    s[c] = static_cast<T>(stddev[c]);
  }
}

template <typename T>
Tensor<T> Model<T>::image_tensor(const Image& image) const {
  if (image.channels != 3) throw std::invalid_argument("expected an RGB image");
  const auto m = params_.find("input.mean")->data();
  const auto s = params_.find("input.std")->data();
  const std::int64_t hw = static_cast<std::int64_t>(image.width) * image.height;
  memory::Buffer<T> data(static_cast<std::size_t>(3 * hw));
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t i = 0; i < hw; ++i) {
      data[c * hw + i] = (static_cast<T>(image.pixels[i * 3 + c]) - m[c]) / s[c];
    }
  }
  return Tensor<T>::from_buffer({3, image.height, image.width}, std::move(data));
}

template <typename T>
ForwardResult<T> Model<T>::forward(const std::vector<CameraView>& views, bool training) {
  if (views.size() < 2) throw std::invalid_argument("need a reference and at least one source view");
  const Image& ref_image = views.front().image;
  config_.validate_image(ref_image.width, ref_image.height);
  for (const auto& v : views) {
    if (v.image.width != ref_image.width || v.image.height != ref_image.height) {
      throw std::invalid_argument("all views must share the reference image size");
    }
  }
  const VariantTraits traits = variant_traits(config_.variant);
  const CameraView& ref = views.front();
  ForwardResult<T> result;
  result.hypotheses = DepthHypothesisSet(ref.d_min, ref.d_max, config_.num_depth, traits.sampling);

  std::vector<Tensor<T>> feats;
  for (const auto& v : views) feats.push_back(features_.forward(image_tensor(v.image), training));
  std::vector<Tensor<T>> src_feats(feats.begin() + 1, feats.end());
  std::vector<CameraView> src_cams;
  for (std::size_t i = 1; i < views.size(); ++i) src_cams.push_back(views[i].scaled(0.25));
  const CameraView ref_cam = ref.scaled(0.25);

  Tensor<T> volume =
      traits.correlation
          ? build_correlation_volume(feats[0], src_feats, result.hypotheses, ref_cam, src_cams,
                                     config_.groups)
          : build_variance_volume(feats[0], src_feats, result.hypotheses, ref_cam, src_cams);
  result.volume_elements = volume.numel();
  feats.clear();
  src_feats.clear();

  for (auto& branch : filter_.forward(volume, training)) {
    result.tap_rows.push_back(branch.tap_row);
    result.branches.push_back(regress(branch.logits, result.hypotheses));
  }
  return result;
}

template <typename T>
ForwardResult<T> Model<T>::infer(const std::vector<CameraView>& views) {
  NoGradGuard guard;
  return forward(views, false);
}

template <typename T>
std::vector<TraceRow> Model<T>::trace(int width, int height) const {
  config_.validate_image(width, height);
  std::vector<TraceRow> rows;
  Shape s{3, height, width};
  rows.push_back({"input", s});
  for (int i = 0; i < FeatureExtractor<T>::kLayers; ++i) {
    s = features_.layer(i).output_shape(s);
    rows.push_back({std::to_string(i + 1), s});
  }
  const VariantTraits traits = variant_traits(config_.variant);
  const Shape volume{traits.correlation ? config_.groups : s[0], config_.num_depth, s[1], s[2]};
  rows.push_back({"volume", volume});
  for (const auto& [row, shape] : filter_.trace(volume)) rows.push_back({std::to_string(row), shape});
  return rows;
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model) : model_(model) {
  for (const auto& e : model_.params().entries()) {
    if (e.trainable) square_avg_.add(e.name, Tensor<T>::zeros(e.tensor.shape()), false);
  }
}

template <typename T>
StepResult Trainer<T>::step(const TrainingSample& sample) {
  const NetworkConfig& config = model_.config();
  ForwardResult<T> fwd = model_.forward(sample.views, true);
  const Tensor<T>& first = fwd.branches.front().depth;
  if (sample.gt_depth.width != first.dim(1) || sample.gt_depth.height != first.dim(0)) {
    throw std::invalid_argument("ground-truth depth is " + std::to_string(sample.gt_depth.width) +
                                "x" + std::to_string(sample.gt_depth.height) +
                                ", expected " + shape_string(first.shape()));
  }
  std::vector<T> gt(sample.gt_depth.values.begin(), sample.gt_depth.values.end());
  std::vector<T> mask(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) mask[i] = gt[i] > T(0) ? T(1) : T(0);
  const Tensor<T> gt_t = Tensor<T>::from_data(first.shape(), gt);
  const Tensor<T> mask_t = Tensor<T>::from_data(first.shape(), mask);

  std::vector<Tensor<T>> preds;
  std::vector<double> weights;
  StepResult r;
  for (std::size_t q = 0; q < fwd.branches.size(); ++q) {
    preds.push_back(fwd.branches[q].depth);
    const int row = fwd.tap_rows[q];
    const bool single = fwd.branches.size() == 1;
    weights.push_back(single ? config.loss_weights[2] : config.loss_weights[static_cast<std::size_t>((row - 12) / 6)]);
    r.branch_losses.push_back(
        static_cast<double>(masked_mean_abs_diff(fwd.branches[q].depth.detach(), gt_t, mask_t).item()));
  }
  const Tensor<T> loss = depth_loss(preds, weights, gt_t, mask_t);
  r.iteration = iteration_;
  r.learning_rate = learning_rate_at(config, iteration_);
  r.loss = static_cast<double>(loss.item());
  if (!std::isfinite(r.loss)) {
    throw NumericError("non-finite loss at iteration " + std::to_string(iteration_));
  }
  loss.backward();
  apply_gradients();
  return r;
}

template <typename T>
void Trainer<T>::apply_gradients() {
  const NetworkConfig& config = model_.config();
  const T lr = static_cast<T>(learning_rate_at(config, iteration_));
  const T alpha = static_cast<T>(config.rms_alpha);
  const T eps = static_cast<T>(config.rms_eps);
  for (auto& e : model_.params().entries()) {
    if (!e.trainable || !e.tensor.has_grad()) continue;
    auto p = e.tensor.mutable_data();
    const auto g = e.tensor.grad();
    auto v = square_avg_.find(e.name)->mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw NumericError("non-finite gradient in " + e.name + " at iteration " +
                           std::to_string(iteration_));
      }
      v[i] = alpha * v[i] + (T(1) - alpha) * g[i] * g[i];
      p[i] -= lr * g[i] / (std::sqrt(v[i]) + eps);
    }
    e.tensor.zero_grad();
  }
  ++iteration_;
}

namespace {

NamedArray meta_array(const std::string& name, std::vector<double> values) {
  NamedArray a;
  a.name = name;
  a.dtype = DType::Float64;
  a.shape = {static_cast<std::int64_t>(values.size())};
  a.f64 = std::move(values);
  return a;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const Trainer<T>* trainer) {
  const NetworkConfig& c = model.config();
  std::vector<NamedArray> arrays = to_arrays(model.params(), "model.");
  if (trainer != nullptr) {
    auto state = to_arrays(trainer->state(), "rmsprop.");
    arrays.insert(arrays.end(), state.begin(), state.end());
  }
  arrays.push_back(meta_array(
      "meta.config",
      {static_cast<double>(c.variant), static_cast<double>(c.num_depth), static_cast<double>(c.groups),
       c.loss_weights[0], c.loss_weights[1], c.loss_weights[2], c.learning_rate, c.lr_decay,
       static_cast<double>(c.lr_decay_interval), c.rms_alpha, c.rms_eps,
       std::is_same_v<T, float> ? 32.0 : 64.0}));
  arrays.push_back(
      meta_array("meta.iteration", {static_cast<double>(trainer ? trainer->iteration() : 0)}));
  write_checkpoint(path, arrays);
}

LoadedCheckpoint read_model_checkpoint(const std::filesystem::path& path) {
  LoadedCheckpoint out;
  out.arrays = read_checkpoint(path);
  const NamedArray* meta = find_array(out.arrays, "meta.config");
  const NamedArray* iter = find_array(out.arrays, "meta.iteration");
  if (meta == nullptr || iter == nullptr || meta->f64.size() != 12 || iter->f64.size() != 1) {
    throw std::runtime_error(path.string() + ": not a model checkpoint (missing metadata)");
  }
  const auto& m = meta->f64;
  const int variant = static_cast<int>(m[0]);
  if (variant < 0 || variant > 3) throw std::runtime_error(path.string() + ": bad variant tag");
  out.config.variant = static_cast<Variant>(variant);
  out.config.num_depth = static_cast<int>(m[1]);
  out.config.groups = static_cast<int>(m[2]);
  out.config.loss_weights = {m[3], m[4], m[5]};
  out.config.learning_rate = m[6];
  out.config.lr_decay = m[7];
  out.config.lr_decay_interval = static_cast<std::int64_t>(m[8]);
  out.config.rms_alpha = m[9];
  out.config.rms_eps = m[10];
  out.iteration = static_cast<std::int64_t>(iter->f64[0]);
  out.config.validate();
  return out;
}

template <typename T>
void restore_checkpoint(const LoadedCheckpoint& ckpt, Model<T>& model, Trainer<T>* trainer) {
  load_arrays(model.params(), ckpt.arrays, "model.");
  if (trainer != nullptr) {
    load_arrays(trainer->state(), ckpt.arrays, "rmsprop.");
    trainer->set_iteration(ckpt.iteration);
  }
}

template class Model<float>;
template class Model<double>;
template class Trainer<float>;
template class Trainer<double>;

template void save_checkpoint(const std::filesystem::path&, const Model<float>&,
                              const Trainer<float>*);
template void save_checkpoint(const std::filesystem::path&, const Model<double>&,
                              const Trainer<double>*);
template void restore_checkpoint(const LoadedCheckpoint&, Model<float>&, Trainer<float>*);
template void restore_checkpoint(const LoadedCheckpoint&, Model<double>&, Trainer<double>*);

}  // namespace cider
