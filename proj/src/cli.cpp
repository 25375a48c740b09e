#include "cider/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cider/eval.hpp"
#include "cider/fusion.hpp"
#include "cider/io.hpp"
#include "cider/training.hpp"

namespace cider {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string command;
  std::string scene_dir;
  std::string checkpoint;
  std::string variant = "cider";
  int num_depth = 32;
  int groups = 8;
  int views = 5;
  double prob_thresh = 0.8;
  double depth_tol = 0.01;
  double reproj_tol = 1.0;
  int min_views = 3;
  std::uint64_t seed = 0;
  std::string out;

  int scenes = 20;
  std::string kind = "mixed";
  int width = 64;
  int height = 64;
  std::int64_t iterations = 2000;
  bool resume = false;
  std::string depth_dir;
  bool use_gt = false;
  bool ascii = false;
  std::string cloud;
  double threshold = 0.0;
};

std::string indexed(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%02zu.%s", stem, i, ext);
  return buf;
}

void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

FusionConfig fusion_config(const Options& o) {
  FusionConfig c;
  c.prob_thresh = o.prob_thresh;
  c.depth_tol = o.depth_tol;
  c.reproj_tol = o.reproj_tol;
  c.min_views = o.min_views;
  c.validate();
  return c;
}

std::vector<fs::path> scene_dirs(const fs::path& root) {
  if (fs::exists(root / "cam_00.txt")) return {root};
  std::vector<fs::path> dirs;
  if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory() && fs::exists(e.path() / "cam_00.txt")) dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), "no scenes found under " + root.string());
  return dirs;
}

int cmd_synth(const Options& o) {
  require(!o.out.empty(), "synth needs --out");
  require(o.scenes > 0, "--scenes must be positive");
  const SurfaceKind cycle[4] = {SurfaceKind::Plane, SurfaceKind::TiltedPlane, SurfaceKind::Sphere,
                                SurfaceKind::Step};
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < o.scenes; ++i) {
    SceneSpec spec;
    spec.seed = o.seed * 1000003ULL + static_cast<std::uint64_t>(i);
    spec.kind = o.kind == "mixed" ? cycle[i % 4] : parse_surface(o.kind);
    spec.width = o.width;
    spec.height = o.height;
    spec.views = o.views;
    spec.num_depth = o.num_depth;
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03d", i);
    write_scene(fs::path(o.out) / name, render_scene(spec));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "wrote " << o.scenes << " scenes with " << o.views << " views to " << o.out << " in "
            << secs << " s\n";
  return kExitOk;
}

NetworkConfig network_config(const Options& o) {
  NetworkConfig c;
  c.variant = parse_variant(o.variant);
  c.num_depth = o.num_depth;
  c.groups = o.groups;
  c.validate();
  return c;
}

int cmd_train(const Options& o) {
  require(!o.scene_dir.empty() && !o.checkpoint.empty(), "train needs --scene-dir and --checkpoint");
  require(o.iterations >= 0, "--iterations must be non-negative");
  std::vector<SceneData> scenes;
  for (const auto& d : scene_dirs(o.scene_dir)) scenes.push_back(read_scene(d));
  const std::vector<TrainingSample> samples = build_samples(scenes, o.views);

  const bool resume = o.resume && fs::exists(o.checkpoint);
  std::optional<LoadedCheckpoint> ckpt;
  NetworkConfig config = network_config(o);
  if (resume) {
    ckpt = read_model_checkpoint(o.checkpoint);
    config = ckpt->config;
  }
  const Image& first = samples.front().views.front().image;
  config.validate_image(first.width, first.height);
  Model<float> model(config, o.seed);
  Trainer<float> trainer(model);
  if (resume) {
    restore_checkpoint(*ckpt, model, &trainer);
  } else {
    std::vector<double> mean, stddev;
    image_statistics(samples, mean, stddev);
    model.set_input_normalization(mean, stddev);
  }

  const fs::path log_path = o.out.empty() ? fs::path(o.checkpoint + ".csv") : fs::path(o.out);
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  require(static_cast<bool>(log), "cannot write " + log_path.string());
  if (!resume) {
    log << "iteration,lr,loss";
    for (int row : model.filter().tap_rows()) log << ",branch_" << row;
    log << '\n';
  }
  const VariantTraits traits = variant_traits(config.variant);
  const std::int64_t channels = traits.correlation ? config.groups : FeatureExtractor<float>::kChannels;
  std::cout << "variant " << variant_name(config.variant) << ", " << samples.size() << " samples, "
            << "cost volume " << channels << "x" << config.num_depth << "x" << first.height / 4 << "x"
            << first.width / 4 << " = " << channels * config.num_depth * (first.height / 4) * (first.width / 4)
            << " elements\n";
  const auto t0 = std::chrono::steady_clock::now();
  train_until(trainer, samples, o.seed, o.iterations, &log, [&](const StepResult& r) {
    if ((r.iteration + 1) % 100 == 0 || r.iteration + 1 == o.iterations) {
      std::cout << "iteration " << r.iteration + 1 << " loss " << r.loss << " lr " << r.learning_rate
                << '\n';
    }
  });
  save_checkpoint(o.checkpoint, model, &trainer);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "saved " << o.checkpoint << " at iteration " << trainer.iteration() << " (" << secs
            << " s)\n";
  return kExitOk;
}

template <typename T>
Map2D to_map(const Tensor<T>& t) {
  Map2D m(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)));
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) m.values[i] = static_cast<float>(d[i]);
  return m;
}

int cmd_infer(const Options& o) {
  require(!o.scene_dir.empty() && !o.checkpoint.empty(), "infer needs --scene-dir and --checkpoint");
  const SceneData scene = read_scene(o.scene_dir);
  const LoadedCheckpoint ckpt = read_model_checkpoint(o.checkpoint);
  Model<float> model(ckpt.config, 0);
  restore_checkpoint(ckpt, model);
  const fs::path out = o.out.empty() ? fs::path(o.scene_dir) / "estimate" : fs::path(o.out);
  fs::create_directories(out);
  for (int ref = 0; ref < static_cast<int>(scene.views.size()); ++ref) {
    std::vector<CameraView> views{scene.views[ref]};
    for (int s : select_sources(scene.views, ref, o.views - 1)) views.push_back(scene.views[s]);
    require(views.size() >= 2, "inference needs at least two views");
    const ForwardResult<float> r = model.infer(views);
    const Regression<float>& final = r.final_branch();
    const Map2D depth = to_map(final.depth);
    const Map2D ordinal = to_map(final.ordinal);
    for (float d : depth.values) {
      if (!std::isfinite(d)) throw NumericError("non-finite depth in view " + std::to_string(ref));
    }
    Map2D prob(depth.width, depth.height);
    const auto p = final.prob.data();
    const std::size_t hw = depth.values.size();
    for (std::size_t i = 0; i < hw; ++i) {
      const auto j = static_cast<std::size_t>(std::lround(ordinal.values[i]));
      prob.values[i] = p[j * hw + i];
    }
    write_pfm(out / indexed("depth", ref, "pfm"), depth);
    write_pfm(out / indexed("prob", ref, "pfm"), prob);
    write_pfm(out / indexed("conf", ref, "pfm"), confidence_map(final.prob, ordinal));
    if (!scene.depth.empty()) {
      const DepthMetrics m = evaluate_depth(depth, subsample_depth(scene.depth[ref], 4));
      std::cout << "view " << ref << " depth MAE " << m.mae << " inliers(1/2/5%) " << m.inlier_1
                << ' ' << m.inlier_2 << ' ' << m.inlier_5 << '\n';
    }
  }
  std::cout << "wrote estimates for " << scene.views.size() << " views to " << out.string() << '\n';
  return kExitOk;
}

int cmd_fuse(const Options& o) {
  require(!o.scene_dir.empty(), "fuse needs --scene-dir");
  const FusionConfig config = fusion_config(o);
  const SceneData scene = read_scene(o.scene_dir);
  const fs::path depth_dir = o.depth_dir.empty() ? fs::path(o.scene_dir) / "estimate" : fs::path(o.depth_dir);
  std::vector<DepthView> views;
  for (std::size_t i = 0; i < scene.views.size(); ++i) {
    DepthView v;
    if (o.use_gt) {
      require(!scene.depth.empty(), "--gt needs ground-truth depth in the scene");
      v.depth = scene.depth[i];
    } else {
      v.depth = filter_depth(read_pfm(depth_dir / indexed("depth", i, "pfm")),
                             read_pfm(depth_dir / indexed("conf", i, "pfm")), config.prob_thresh);
    }
    v.camera = scene.views[i].scaled(static_cast<double>(v.depth.width) / scene.views[i].image.width);
    v.color = scene.views[i].image;
    views.push_back(std::move(v));
  }
  FusionReport report;
  const PointCloud cloud = fuse(views, config, &report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  const fs::path out = o.out.empty() ? fs::path(o.scene_dir) / "fused.ply" : fs::path(o.out);
  write_ply(out, cloud, !o.ascii);
  std::cout << "fused " << cloud.points.size() << " points into " << out.string() << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o) {
  require(!o.scene_dir.empty(), "eval needs --scene-dir");
  const SceneData scene = read_scene(o.scene_dir);
  require(!scene.depth.empty(), "eval needs ground-truth depth in the scene");
  const fs::path cloud_path = o.cloud.empty() ? fs::path(o.scene_dir) / "fused.ply" : fs::path(o.cloud);
  const PointCloud cloud = read_ply(cloud_path);
  std::ostringstream report;
  int code = kExitOk;
  if (cloud.points.empty()) {
    report << "status=failed\nreason=empty point cloud\n";
    code = kExitValidation;
  } else {
    std::vector<Eigen::Vector3d> rec;
    for (const auto& p : cloud.points) rec.emplace_back(p.x, p.y, p.z);
    const CloudMetrics m = evaluate_clouds(rec, ground_truth_points(scene), o.threshold);
    report << "status=ok\naccuracy=" << m.accuracy << "\ncompleteness=" << m.completeness
           << "\noverall=" << m.overall << "\nthreshold=" << m.threshold << "\nprecision=" << m.precision
           << "\nrecall=" << m.recall << "\nf1=" << m.f1 << '\n';
  }
  if (!o.depth_dir.empty()) {
    for (std::size_t i = 0; i < scene.views.size(); ++i) {
      const Map2D est = read_pfm(fs::path(o.depth_dir) / indexed("depth", i, "pfm"));
      const Map2D gt = subsample_depth(scene.depth[i], scene.depth[i].width / est.width);
      const DepthMetrics d = evaluate_depth(est, gt);
      report << "view" << i << ".depth_mae=" << d.mae << "\nview" << i << ".inlier_1=" << d.inlier_1
             << "\nview" << i << ".inlier_2=" << d.inlier_2 << "\nview" << i << ".inlier_5=" << d.inlier_5
             << '\n';
    }
  }
  std::cout << report.str();
  if (!o.out.empty()) {
    std::ofstream os(o.out, std::ios::trunc);
    os << report.str();
  }
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  Options o;
  CLI::App app{"cider: multi-view stereo depth estimation and fusion"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_config("--config", "", "key=value configuration file; flags override it");
  app.add_option("command", o.command, "synth | train | infer | fuse | eval")
      ->required()
      ->check(CLI::IsMember({"synth", "train", "infer", "fuse", "eval"}));
  app.add_option("--scene-dir", o.scene_dir, "scene directory (or dataset root for train)");
  app.add_option("--checkpoint", o.checkpoint, "model checkpoint path");
  app.add_option("--variant", o.variant, "base | agc | agc-idr | cider")
      ->check(CLI::IsMember({"base", "agc", "agc-idr", "cider"}));
  app.add_option("--num-depth", o.num_depth, "depth hypotheses D");
  app.add_option("--groups", o.groups, "correlation groups G");
  app.add_option("--views", o.views, "views per sample, reference included");
  app.add_option("--prob-thresh", o.prob_thresh, "confidence threshold for fusion");
  app.add_option("--depth-tol", o.depth_tol, "relative depth tolerance for fusion");
  app.add_option("--reproj-tol", o.reproj_tol, "reprojection tolerance in pixels");
  app.add_option("--min-views", o.min_views, "consistent views required, reference included");
  app.add_option("--seed", o.seed, "global seed");
  app.add_option("--out", o.out, "output path");
  app.add_option("--scenes", o.scenes, "synth: number of scenes");
  app.add_option("--kind", o.kind, "synth: mixed | plane | tilted | sphere | step");
  app.add_option("--width", o.width, "synth: image width");
  app.add_option("--height", o.height, "synth: image height");
  app.add_option("--iterations", o.iterations, "train: total iterations");
  app.add_flag("--resume", o.resume, "train: continue from an existing checkpoint");
  app.add_option("--depth-dir", o.depth_dir, "fuse/eval: directory of estimated maps");
  app.add_flag("--gt", o.use_gt, "fuse: use ground-truth depth maps");
  app.add_flag("--ascii", o.ascii, "fuse: write ASCII PLY");
  app.add_option("--cloud", o.cloud, "eval: reconstructed cloud");
  app.add_option("--threshold", o.threshold, "eval: distance threshold (default 1% of diagonal)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  try {
    if (o.command == "synth") return cmd_synth(o);
    if (o.command == "train") return cmd_train(o);
    if (o.command == "infer") return cmd_infer(o);
    if (o.command == "fuse") return cmd_fuse(o);
    return cmd_eval(o);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace cider
