#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "cider/model.hpp"
#include "cider/scenes.hpp"

namespace cider {

/// Indices of the `count` views closest to `ref` by camera center (ties
/// broken by index), excluding ref itself.
std::vector<int> select_sources(const std::vector<CameraView>& views, int ref, int count);

/// One sample per (scene, reference view) with views-1 nearest sources.
std::vector<TrainingSample> build_samples(const std::vector<SceneData>& scenes, int views);

/// Per-channel mean and standard deviation over every image of the samples'
/// reference views.
void image_statistics(const std::vector<TrainingSample>& samples, std::vector<double>& mean,
                      std::vector<double>& stddev);

/// Sample index for a training iteration: a fresh permutation of all samples
/// per epoch, seeded by (seed, epoch), so resuming needs only the iteration.
std::size_t sample_index(std::uint64_t seed, std::int64_t iteration, std::size_t count);

/// Runs iterations until trainer.iteration() reaches `until`. Writes
/// "iteration,lr,loss,branch_0[,branch_1,branch_2]" lines to log if given.
template <typename T>
void train_until(Trainer<T>& trainer, const std::vector<TrainingSample>& samples, std::uint64_t seed,
                 std::int64_t until, std::ostream* log = nullptr,
                 const std::function<void(const StepResult&)>& on_step = {});

/// Mean over samples of the final-branch masked depth MAE (inference mode).
template <typename T>
double mean_depth_error(Model<T>& model, const std::vector<TrainingSample>& samples);

}  // namespace cider
