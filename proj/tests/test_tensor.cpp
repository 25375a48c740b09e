#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cider/checkpoint.hpp"
#include "cider/conv.hpp"
#include "cider/layers.hpp"
#include "cider/ops.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cider;
using testing::check_gradients;
using testing::max_abs_diff;
using testing::values;

namespace {

Tensor64 rand64(const Shape& s, std::mt19937_64& rng, double sd = 1.0) {
  return Tensor64::randn(s, rng, sd).set_requires_grad(true);
}

// Projects an arbitrary output onto a fixed random direction.
Tensor64 probe(const Tensor64& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return weighted_sum(y, Tensor64::randn(y.shape(), rng));
}

}  // namespace

TEST_CASE("elementwise ops match their definitions") {
  auto a = Tensor64::from_data({4}, {1.0, -2.0, 0.0, 3.5});
  auto b = Tensor64::from_data({4}, {0.5, 0.5, -1.0, 1.0});
  CHECK(values(add(a, b)) == std::vector<double>{1.5, -1.5, -1.0, 4.5});
  CHECK(values(scalar_mul(a, 2.0)) == std::vector<double>{2.0, -4.0, 0.0, 7.0});
  CHECK(values(relu(a)) == std::vector<double>{1.0, 0.0, 0.0, 3.5});
  CHECK(sum(a).item() == doctest::Approx(2.5));
  CHECK(mean_abs_diff(a, b).item() == doctest::Approx((0.5 + 2.5 + 1.0 + 2.5) / 4));
  auto mask = Tensor64::from_data({4}, {1.0, 0.0, 0.0, 1.0});
  CHECK(masked_mean_abs_diff(a, b, mask).item() == doctest::Approx((0.5 + 2.5) / 2));
  CHECK_THROWS_AS(masked_mean_abs_diff(a, b, Tensor64::zeros({4})), std::invalid_argument);
  CHECK_THROWS_AS(add(a, Tensor64::zeros({3})), std::invalid_argument);
}

TEST_CASE("softmax normalizes along the requested axis") {
  std::mt19937_64 rng(3);
  auto x = Tensor64::randn({5, 3, 2}, rng, 4.0);
  auto p = softmax(x, 0);
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += p.data()[j * 6 + i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto big = Tensor64::from_data({2}, {1000.0, 1001.0});
  auto pb = softmax(big, 0);
  CHECK(pb.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("conv2d matches a direct loop oracle") {
  std::mt19937_64 rng(5);
  for (int stride : {1, 2}) {
    for (int k : {1, 3, 5}) {
      auto x = Tensor64::randn({3, 9, 7}, rng);
      auto w = Tensor64::randn({4, 3, k, k}, rng);
      auto b = Tensor64::randn({4}, rng);
      auto y = conv2d(x, w, b, {stride, k / 2, 0});
      int Ho, Wo;
      auto ref = oracle::conv2d(values(x), 3, 9, 7, values(w), 4, k, values(b), stride, Ho, Wo);
      CHECK(y.shape() == Shape{4, Ho, Wo});
      CHECK(max_abs_diff(values(y), ref) < 1e-12);
    }
  }
}

TEST_CASE("conv3d matches a direct loop oracle") {
  std::mt19937_64 rng(6);
  for (int stride : {1, 2}) {
    auto x = Tensor64::randn({2, 6, 5, 8}, rng);
    auto w = Tensor64::randn({3, 2, 3, 3, 3}, rng);
    auto y = conv3d(x, w, Tensor64(), {stride, 1, 0});
    int Do, Ho, Wo;
    auto ref = oracle::conv3d(values(x), 2, 6, 5, 8, values(w), 3, 3, {}, stride, Do, Ho, Wo);
    CHECK(y.shape() == Shape{3, Do, Ho, Wo});
    CHECK(max_abs_diff(values(y), ref) < 1e-12);
  }
}

TEST_CASE("deconv3d matches a scatter oracle and doubles extents") {
  std::mt19937_64 rng(7);
  auto x = Tensor64::randn({3, 2, 3, 4}, rng);
  auto w = Tensor64::randn({3, 2, 3, 3, 3}, rng);
  auto b = Tensor64::randn({2}, rng);
  auto y = deconv3d(x, w, b, {2, 1, 1});
  int Do, Ho, Wo;
  auto ref = oracle::deconv3d(values(x), 3, 2, 3, 4, values(w), 2, 3, values(b), 2, Do, Ho, Wo);
  CHECK(y.shape() == Shape{2, 4, 6, 8});
  CHECK(Shape{2, Do, Ho, Wo} == y.shape());
  CHECK(max_abs_diff(values(y), ref) < 1e-12);
}

TEST_CASE("deconv3d is the adjoint of conv3d") {
  std::mt19937_64 rng(8);
  // <conv(x), y> == <x, deconv(y)> with the same kernel [O=Cin_deconv, C, k,k,k]
  auto w = Tensor64::randn({4, 3, 3, 3, 3}, rng);
  auto x = Tensor64::randn({3, 8, 6, 4}, rng);
  auto cx = conv3d(x, w, Tensor64(), {2, 1, 0});
  auto y = Tensor64::randn(cx.shape(), rng);
  auto dy = deconv3d(y, w, Tensor64(), {2, 1, 1});
  REQUIRE(dy.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * dy.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv shape validation reports mismatches") {
  auto x = Tensor64::zeros({3, 8, 8});
  CHECK_THROWS_AS(conv2d(x, Tensor64::zeros({4, 2, 3, 3}), Tensor64(), {1, 1, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv3d(x, Tensor64::zeros({4, 3, 3, 3, 3}), Tensor64(), {1, 1, 0}),
                  std::invalid_argument);
}

TEST_CASE("batch norm uses batch statistics in training and running ones in inference") {
  std::mt19937_64 rng(9);
  auto x = Tensor64::randn({2, 3, 4}, rng, 3.0);
  auto gamma = Tensor64::from_data({2}, {1.5, 0.5});
  auto beta = Tensor64::from_data({2}, {0.1, -0.2});
  auto rm = Tensor64::zeros({2});
  auto rv = Tensor64::full({2}, 1.0);
  auto y = batch_norm(x, gamma, beta, rm, rv, true, 0.9, 1e-5);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int i = 0; i < 12; ++i) m += x.data()[c * 12 + i];
    m /= 12;
    for (int i = 0; i < 12; ++i) v += std::pow(x.data()[c * 12 + i] - m, 2);
    for (int i = 0; i < 12; ++i) {
      const double want = gamma.data()[c] * (x.data()[c * 12 + i] - m) / std::sqrt(v / 12 + 1e-5) +
                          beta.data()[c];
      CHECK(y.data()[c * 12 + i] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(rm.data()[c] == doctest::Approx(0.1 * m));
    CHECK(rv.data()[c] == doctest::Approx(0.9 + 0.1 * v / 11));
  }
  auto z = batch_norm(x, gamma, beta, rm, rv, false, 0.9, 1e-5);
  CHECK(z.data()[5] == doctest::Approx(gamma.data()[0] * (x.data()[5] - rm.data()[0]) /
                                           std::sqrt(rv.data()[0] + 1e-5) +
                                       beta.data()[0]));
}

TEST_CASE("gradients of every op agree with central differences") {
  std::mt19937_64 rng(11);
  const double tol = 1e-4;

  SUBCASE("add, scalar_mul, relu") {
    auto a = rand64({3, 4}, rng), b = rand64({3, 4}, rng);
    auto r = check_gradients({a, b}, [&] { return probe(relu(add(a, scalar_mul(b, -1.7)))); }, 32);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("softmax on each axis") {
    auto x = rand64({4, 3, 2}, rng, 2.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto r = check_gradients({x}, [&] { return probe(softmax(x, axis)); }, 24);
      CHECK(r.max_rel < tol);
    }
  }
  SUBCASE("reshape and sum") {
    auto x = rand64({2, 6}, rng);
    auto r = check_gradients({x}, [&] { return sum(relu(reshape(x, {3, 4}))); }, 12);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("mean_abs_diff and masked variant") {
    auto a = rand64({10}, rng), b = rand64({10}, rng);
    auto mask = Tensor64::from_data({10}, {1, 0, 1, 1, 0, 1, 1, 1, 0, 1});
    CHECK(check_gradients({a, b}, [&] { return mean_abs_diff(a, b); }, 10).max_rel < tol);
    CHECK(check_gradients({a}, [&] { return masked_mean_abs_diff(a, b, mask); }, 10).max_rel < tol);
  }
  SUBCASE("conv2d stride 1 and 2") {
    auto x = rand64({3, 8, 8}, rng), w = rand64({4, 3, 3, 3}, rng), b = rand64({4}, rng);
    for (int s : {1, 2}) {
      auto r = check_gradients({x, w, b}, [&] { return probe(conv2d(x, w, b, {s, 1, 0})); }, 32);
      CHECK(r.max_rel < tol);
    }
  }
  SUBCASE("conv3d stride 1 and 2") {
    auto x = rand64({2, 4, 4, 4}, rng), w = rand64({3, 2, 3, 3, 3}, rng), b = rand64({3}, rng);
    for (int s : {1, 2}) {
      auto r = check_gradients({x, w, b}, [&] { return probe(conv3d(x, w, b, {s, 1, 0})); }, 32);
      CHECK(r.max_rel < tol);
    }
  }
  SUBCASE("deconv3d") {
    auto x = rand64({3, 2, 2, 2}, rng), w = rand64({3, 2, 3, 3, 3}, rng), b = rand64({2}, rng);
    auto r = check_gradients({x, w, b}, [&] { return probe(deconv3d(x, w, b, {2, 1, 1})); }, 32);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("batch_norm in training mode") {
    auto x = rand64({3, 2, 5}, rng), g = rand64({3}, rng), be = rand64({3}, rng);
    auto rm = Tensor64::zeros({3});
    auto rv = Tensor64::full({3}, 1.0);
    auto r = check_gradients(
        {x, g, be}, [&] { return probe(batch_norm(x, g, be, rm, rv, true, 0.9, 1e-5)); }, 30);
    CHECK(r.max_rel < tol);
  }
}

TEST_CASE("gradients accumulate across shared uses") {
  auto x = Tensor64::from_data({2}, {1.0, -3.0}).set_requires_grad(true);
  sum(add(x, x)).backward();
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("no-grad guard disables recording") {
  auto x = Tensor64::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  NoGradGuard guard;
  CHECK_FALSE(grad_enabled());
  CHECK_FALSE(add(x, x).requires_grad());
}

TEST_CASE("tracked memory follows tensor lifetimes") {
  memory::PeakScope scope;
  const auto before = memory::current_bytes();
  {
    auto t = Tensor32::zeros({1000});
    CHECK(memory::current_bytes() - before == 4000);
  }
  CHECK(memory::current_bytes() == before);
  CHECK(scope.peak_delta() >= 4000);
}

TEST_CASE("checkpoint container round-trips names, shapes and bits") {
  const auto path = std::filesystem::temp_directory_path() / "cider_test_ckpt.bin";
  std::vector<NamedArray> arrays(2);
  arrays[0].name = "alpha";
  arrays[0].dtype = DType::Float32;
  arrays[0].shape = {2, 3};
  arrays[0].f32 = {1.f, -2.f, 3.5f, 1e-30f, -0.f, 7.f};
  arrays[1].name = "beta.weight";
  arrays[1].dtype = DType::Float64;
  arrays[1].shape = {1};
  arrays[1].f64 = {3.141592653589793};
  write_checkpoint(path, arrays);
  auto back = read_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "alpha");
  CHECK(back[0].shape == Shape{2, 3});
  CHECK(back[0].f32 == arrays[0].f32);
  CHECK(std::signbit(back[0].f32[4]));
  CHECK(back[1].f64 == arrays[1].f64);
  CHECK(find_array(back, "beta.weight") != nullptr);
  CHECK(find_array(back, "gamma") == nullptr);

  std::ofstream(path, std::ios::binary) << "NOTACKPT";
  CHECK_THROWS(read_checkpoint(path));
  std::filesystem::remove(path);
}

TEST_CASE("parameter sets load from arrays and reject mismatches") {
  std::mt19937_64 rng(1);
  ParameterSet<float> a, b;
  ConvLayer<float> la("l", {LayerKind::Conv2d, 3, 4, 3, 1, true, Activation::Relu}, a, rng);
  ConvLayer<float> lb("l", {LayerKind::Conv2d, 3, 4, 3, 1, true, Activation::Relu}, b, rng);
  auto arrays = to_arrays(a, "m.");
  load_arrays(b, arrays, "m.");
  CHECK(std::vector<float>(la.weight.data().begin(), la.weight.data().end()) ==
        std::vector<float>(lb.weight.data().begin(), lb.weight.data().end()));
  ParameterSet<float> c;
  ConvLayer<float> lc("l", {LayerKind::Conv2d, 3, 5, 3, 1, true, Activation::Relu}, c, rng);
  CHECK_THROWS_AS(load_arrays(c, arrays, "m."), std::runtime_error);
}
