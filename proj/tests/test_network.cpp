#include <doctest.h>

#include <filesystem>
#include <random>

#include "cider/feature.hpp"
#include "cider/filtering.hpp"
#include "cider/model.hpp"
#include "cider/ops.hpp"
#include "cider/scenes.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cider;
using testing::check_gradients;
using testing::max_abs_diff;
using testing::values;

namespace {

TrainingSample tiny_sample(std::uint64_t seed, SurfaceKind kind = SurfaceKind::TiltedPlane) {
  SceneSpec spec;
  spec.seed = seed;
  spec.kind = kind;
  spec.width = 32;
  spec.height = 32;
  spec.focal = 40;
  spec.views = 3;
  Scene scene = render_scene(spec);
  return make_training_sample(scene.views, scene.depth, 0);
}

NetworkConfig tiny_config(Variant v) {
  NetworkConfig c;
  c.variant = v;
  c.num_depth = 8;
  return c;
}

}  // namespace

TEST_CASE("feature extractor maps 3xHxW to 32xH/4xW/4 with signed output") {
  std::mt19937_64 rng(1);
  ParameterSet<float> params;
  FeatureExtractor<float> net(params, rng);
  auto img = Tensor32::randn({3, 24, 40}, rng);
  auto f = net.forward(img, true);
  CHECK(f.shape() == Shape{32, 6, 10});
  int negative = 0;
  for (float v : f.data()) negative += v < 0;
  CHECK(negative > 0);
  CHECK_THROWS_AS(net.forward(Tensor32::zeros({3, 22, 40}), true), std::invalid_argument);
  CHECK_THROWS_AS(net.forward(Tensor32::zeros({1, 24, 40}), true), std::invalid_argument);
}

TEST_CASE("feature layers follow the layer table") {
  std::mt19937_64 rng(1);
  ParameterSet<float> params;
  FeatureExtractor<float> net(params, rng);
  const int kernels[8] = {3, 3, 5, 3, 3, 5, 3, 3};
  const int strides[8] = {1, 1, 2, 1, 1, 2, 1, 1};
  const int channels[8] = {8, 8, 16, 16, 16, 32, 32, 32};
  for (int i = 0; i < 8; ++i) {
    const auto& s = net.layer(i).spec();
    CHECK(s.kernel == kernels[i]);
    CHECK(s.stride == strides[i]);
    CHECK(s.out_channels == channels[i]);
    CHECK(s.batch_norm == (i != 7));
    CHECK((s.activation == Activation::Relu) == (i != 7));
  }
}

TEST_CASE("cost filter heads depend on the number of U-Nets") {
  std::mt19937_64 rng(2);
  ParameterSet<float> p1, p2;
  CostFilter<float> one(8, 1, p1, rng), two(8, 2, p2, rng);
  CHECK(one.tap_rows() == std::vector<int>{18});
  CHECK(two.tap_rows() == std::vector<int>{12, 18, 24});
  auto vol = Tensor32::randn({8, 8, 8, 16}, rng);
  auto out = two.forward(vol, true);
  REQUIRE(out.size() == 3);
  for (const auto& b : out) CHECK(b.logits.shape() == Shape{8, 8, 16});
  CHECK_THROWS_AS(one.forward(Tensor32::zeros({8, 8, 6, 16}), true), std::invalid_argument);
  CHECK_THROWS_AS(CostFilter<float>(8, 3, p1, rng), std::invalid_argument);
}

TEST_CASE("regression matches the scalar oracle") {
  std::mt19937_64 rng(3);
  const int D = 4, P = 64;
  auto logits = Tensor64::randn({D, 8, 8}, rng, 2.0);
  for (auto sampling : {DepthSampling::InverseDepth, DepthSampling::UniformDepth}) {
    DepthHypothesisSet h(2.0, 8.0, D, sampling);
    auto r = regress(logits, h);
    auto want = oracle::regress(values(logits), D, P, 2.0, 8.0,
                                sampling == DepthSampling::InverseDepth);
    CHECK(max_abs_diff(values(r.prob), want.prob) < 1e-6);
    CHECK(max_abs_diff(values(r.ordinal), want.ordinal) < 1e-6);
    CHECK(max_abs_diff(values(r.depth), want.depth) < 1e-6);
  }
}

TEST_CASE("one-hot probabilities regress to the hypothesis depths") {
  const int D = 8;
  auto h = sample_inverse_depths(2.0, 8.0, D);
  for (int j = 0; j < D; ++j) {
    std::vector<double> logit(D, -200.0);
    logit[j] = 200.0;
    auto r = regress(Tensor64::from_data({D, 1, 1}, logit), h);
    CHECK(r.depth.item() == doctest::Approx(h.depth(j)).epsilon(1e-12));
  }
}

TEST_CASE("regression and loss gradients agree with central differences") {
  std::mt19937_64 rng(4);
  auto logits = Tensor64::randn({6, 3, 4}, rng).set_requires_grad(true);
  auto gt = Tensor64::uniform({3, 4}, rng, 2.0, 8.0);
  auto mask = Tensor64::from_data({3, 4}, {1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1});
  for (auto sampling : {DepthSampling::InverseDepth, DepthSampling::UniformDepth}) {
    DepthHypothesisSet h(2.0, 8.0, 6, sampling);
    auto r = check_gradients({logits}, [&] {
      auto a = regress(logits, h).depth;
      auto b = ordinal_to_depth_map(scalar_mul(expected_ordinal(softmax(logits, 0)), 0.8), h);
      return depth_loss<double>({a, b}, {0.7, 0.5}, gt, mask);
    }, 72);
    CHECK(r.max_rel < 1e-4);
  }
}

TEST_CASE("depth loss weights each branch's masked mean error") {
  auto gt = Tensor64::from_data({1, 3}, {2.0, 3.0, 4.0});
  auto mask = Tensor64::from_data({1, 3}, {1.0, 1.0, 0.0});
  auto a = Tensor64::from_data({1, 3}, {2.5, 3.0, 9.0});
  auto b = Tensor64::from_data({1, 3}, {1.0, 4.0, 0.0});
  CHECK(depth_loss<double>({a, b}, {0.5, 0.7}, gt, mask).item() ==
        doctest::Approx(0.5 * 0.25 + 0.7 * 1.0));
  CHECK_THROWS_AS(depth_loss<double>({a, b}, {0.5}, gt, mask), std::invalid_argument);
}

TEST_CASE("learning rate decays by 0.9 every 10k iterations") {
  NetworkConfig c;
  CHECK(learning_rate_at(c, 0) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(c, 9999) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(c, 10000) == doctest::Approx(9e-4));
  CHECK(learning_rate_at(c, 25000) == doctest::Approx(8.1e-4));
}

TEST_CASE("network configuration is validated") {
  NetworkConfig c;
  CHECK_NOTHROW(c.validate());
  c.num_depth = 30;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.num_depth = 32;
  c.groups = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.groups = 8;
  CHECK_THROWS_AS(c.validate_image(64, 48), std::invalid_argument);
  CHECK_NOTHROW(c.validate_image(64, 32));
  CHECK(parse_variant("agc-idr") == Variant::AgcIdr);
  CHECK(variant_name(Variant::Base) == "base");
  CHECK_THROWS_AS(parse_variant("mvsnet"), std::invalid_argument);
  CHECK(variant_traits(Variant::Base).correlation == false);
  CHECK(variant_traits(Variant::Agc).sampling == DepthSampling::UniformDepth);
  CHECK(variant_traits(Variant::AgcIdr).sampling == DepthSampling::InverseDepth);
  CHECK(variant_traits(Variant::AgcIdr).unets == 1);
  CHECK(variant_traits(Variant::Cider).unets == 2);
}

TEST_CASE("model trace follows the layer table at 640x512") {
  NetworkConfig c;
  Model<float> model(c, 1);
  auto rows = model.trace(640, 512);
  auto find = [&](const std::string& idx) {
    for (const auto& r : rows)
      if (r.index == idx) return r.shape;
    return Shape{};
  };
  CHECK(find("input") == Shape{3, 512, 640});
  CHECK(find("8") == Shape{32, 128, 160});
  CHECK(find("volume") == Shape{8, 192, 128, 160});
  CHECK(find("15") == Shape{64, 24, 16, 20});
  CHECK(find("24") == Shape{8, 192, 128, 160});
  CHECK(find("27") == Shape{1, 192, 128, 160});
  NetworkConfig b = c;
  b.variant = Variant::Base;
  Model<float> base(b, 1);
  CHECK(base.trace(640, 512)[9].shape == Shape{32, 192, 128, 160});
}

TEST_CASE("training a step uses every branch and reports its losses") {
  auto sample = tiny_sample(3);
  for (Variant v : {Variant::Base, Variant::Cider}) {
    Model<float> model(tiny_config(v), 5);
    Trainer<float> trainer(model);
    auto r = trainer.step(sample);
    CHECK(r.iteration == 0);
    CHECK(trainer.iteration() == 1);
    CHECK(r.branch_losses.size() == (v == Variant::Cider ? 3u : 1u));
    double weighted = 0;
    const std::vector<double> w = v == Variant::Cider ? std::vector<double>{0.5, 0.5, 0.7}
                                                      : std::vector<double>{0.7};
    for (std::size_t q = 0; q < w.size(); ++q) weighted += w[q] * r.branch_losses[q];
    CHECK(r.loss == doctest::Approx(weighted).epsilon(1e-5));
  }
}

TEST_CASE("RMSprop applies the documented update") {
  Model<double> model(tiny_config(Variant::Agc), 5);
  Trainer<double> trainer(model);
  Tensor64* w = model.params().find("filter.head18.weight");
  REQUIRE(w != nullptr);
  const double before = w->data()[0];
  w->grad_accumulator()[0] = 0.02;
  trainer.apply_gradients();
  const double v = 0.1 * 0.02 * 0.02;
  CHECK(w->data()[0] == doctest::Approx(before - 1e-3 * 0.02 / (std::sqrt(v) + 1e-8)).epsilon(1e-12));
  CHECK(trainer.state().find("filter.head18.weight")->data()[0] == doctest::Approx(v));
}

TEST_CASE("non-finite values raise a numeric error") {
  auto sample = tiny_sample(3);
  Model<float> model(tiny_config(Variant::Cider), 5);
  Trainer<float> trainer(model);
  model.params().find("filter.conv9.weight")->mutable_data()[0] = NAN;
  CHECK_THROWS_AS(trainer.step(sample), NumericError);
}

TEST_CASE("checkpoint resume reproduces the next step bit-identically") {
  auto a = tiny_sample(3), b = tiny_sample(4, SurfaceKind::Sphere);
  const auto path = std::filesystem::temp_directory_path() / "cider_resume.ckpt";
  Model<float> m1(tiny_config(Variant::Cider), 5);
  Trainer<float> t1(m1);
  t1.step(a);
  t1.step(b);
  save_checkpoint(path, m1, &t1);
  t1.step(a);

  auto loaded = read_model_checkpoint(path);
  CHECK(loaded.iteration == 2);
  CHECK(loaded.config.variant == Variant::Cider);
  CHECK(loaded.config.num_depth == 8);
  Model<float> m2(loaded.config, 99);
  Trainer<float> t2(m2);
  restore_checkpoint(loaded, m2, &t2);
  CHECK(t2.iteration() == 2);
  t2.step(a);
  for (std::size_t i = 0; i < m1.params().entries().size(); ++i) {
    const auto& x = m1.params().entries()[i].tensor.data();
    const auto& y = m2.params().entries()[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  std::filesystem::remove(path);
}

TEST_CASE("inference is deterministic and leaves running statistics untouched") {
  auto s = tiny_sample(7);
  Model<float> model(tiny_config(Variant::AgcIdr), 5);
  REQUIRE(model.params().find("filter.conv9.bn.running_mean") != nullptr);
  auto stats = values(*model.params().find("filter.conv9.bn.running_mean"));
  auto r1 = model.infer(s.views);
  auto r2 = model.infer(s.views);
  CHECK(values(r1.final_branch().depth) == values(r2.final_branch().depth));
  CHECK(values(*model.params().find("filter.conv9.bn.running_mean")) == stats);
  CHECK_FALSE(r1.final_branch().depth.requires_grad());
  for (float d : r1.final_branch().depth.data()) {
    CHECK(d >= s.views[0].d_min);
    CHECK(d <= s.views[0].d_max);
  }
}
