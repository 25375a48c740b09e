#include "cider/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cider {

std::vector<int> select_sources(const std::vector<CameraView>& views, int ref, int count) {
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(views.size()); ++i)
    if (i != ref) order.push_back(i);
  const Eigen::Vector3d c = views[static_cast<std::size_t>(ref)].center();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return (views[a].center() - c).norm() < (views[b].center() - c).norm();
  });
  if (static_cast<int>(order.size()) > count) order.resize(static_cast<std::size_t>(count));
  return order;
}

std::vector<TrainingSample> build_samples(const std::vector<SceneData>& scenes, int views) {
  if (views < 2) throw std::invalid_argument("training needs at least 2 views per sample");
  std::vector<TrainingSample> samples;
  for (const auto& scene : scenes) {
    if (scene.depth.size() != scene.views.size()) {
      throw std::invalid_argument("training scenes need ground-truth depth for every view");
    }
    if (static_cast<int>(scene.views.size()) < views) {
      throw std::invalid_argument("scene has " + std::to_string(scene.views.size()) +
                                  " views, fewer than the requested " + std::to_string(views));
    }
    for (int ref = 0; ref < static_cast<int>(scene.views.size()); ++ref) {
      std::vector<CameraView> subset{scene.views[ref]};
      std::vector<Map2D> depth{scene.depth[ref]};
      for (int s : select_sources(scene.views, ref, views - 1)) {
        subset.push_back(scene.views[s]);
        depth.push_back(scene.depth[s]);
      }
      samples.push_back(make_training_sample(subset, depth, 0));
    }
  }
  return samples;
}

void image_statistics(const std::vector<TrainingSample>& samples, std::vector<double>& mean,
                      std::vector<double>& stddev) {
  std::vector<double> sum(3, 0.0), sq(3, 0.0);
  double n = 0;
  for (const auto& s : samples) {
    const Image& im = s.views.front().image;
    for (std::size_t i = 0; i < im.pixels.size(); i += 3) {
      for (int c = 0; c < 3; ++c) {
        sum[c] += im.pixels[i + c];
        sq[c] += static_cast<double>(im.pixels[i + c]) * im.pixels[i + c];
      }
      n += 1;
    }
  }
  if (n == 0) throw std::invalid_argument("no images to normalize");
  mean.assign(3, 0.0);
  stddev.assign(3, 1.0);
  for (int c = 0; c < 3; ++c) {
    mean[c] = sum[c] / n;
    stddev[c] = std::sqrt(std::max(sq[c] / n - mean[c] * mean[c], 1e-12));
  }
}

std::size_t sample_index(std::uint64_t seed, std::int64_t iteration, std::size_t count) {
  if (count == 0) throw std::invalid_argument("no training samples");
  const auto epoch = static_cast<std::uint64_t>(iteration) / count;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Explicit Fisher-Yates keeps the order independent of the standard library.
  for (std::size_t i = count - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm[static_cast<std::uint64_t>(iteration) % count];
}

template <typename T>
void train_until(Trainer<T>& trainer, const std::vector<TrainingSample>& samples, std::uint64_t seed,
                 std::int64_t until, std::ostream* log,
                 const std::function<void(const StepResult&)>& on_step) {
  while (trainer.iteration() < until) {
    const StepResult r = trainer.step(samples[sample_index(seed, trainer.iteration(), samples.size())]);
    if (log) {
      *log << r.iteration << ',' << r.learning_rate << ',' << r.loss;
      for (double b : r.branch_losses) *log << ',' << b;
      *log << '\n';
    }
    if (on_step) on_step(r);
  }
}

template <typename T>
double mean_depth_error(Model<T>& model, const std::vector<TrainingSample>& samples) {
  double total = 0;
  for (const auto& s : samples) {
    const ForwardResult<T> r = model.infer(s.views);
    const auto d = r.final_branch().depth.data();
    double err = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double g = s.gt_depth.values[i];
      if (g > 0) {
        err += std::abs(static_cast<double>(d[i]) - g);
        ++n;
      }
    }
    if (n > 0) total += err / static_cast<double>(n);
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

template void train_until(Trainer<float>&, const std::vector<TrainingSample>&, std::uint64_t,
                          std::int64_t, std::ostream*, const std::function<void(const StepResult&)>&);
template void train_until(Trainer<double>&, const std::vector<TrainingSample>&, std::uint64_t,
                          std::int64_t, std::ostream*, const std::function<void(const StepResult&)>&);
template double mean_depth_error(Model<float>&, const std::vector<TrainingSample>&);
template double mean_depth_error(Model<double>&, const std::vector<TrainingSample>&);

}  // namespace cider
