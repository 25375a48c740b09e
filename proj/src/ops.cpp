#include "cider/ops.hpp"

#include <algorithm>
#include <cmath>

namespace cider {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

template <typename T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto da = a.data();
  const auto db = b.data();
  memory::Buffer<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return Tensor<T>::record(a.shape(), std::move(out), {a, b},
                           [a, b](std::span<const T>, std::span<const T> g) {
                             for (const auto* t : {&a, &b}) {
                               if (!t->requires_grad()) continue;
                               auto acc = t->grad_accumulator();
                               for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                             }
                           });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T scale) {
  const auto da = a.data();
  memory::Buffer<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * scale;
  return Tensor<T>::record(a.shape(), std::move(out), {a},
                           [a, scale](std::span<const T>, std::span<const T> g) {
                             auto acc = a.grad_accumulator();
                             for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * scale;
                           });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto dx = x.data();
  memory::Buffer<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] > T(0) ? dx[i] : T(0);
  return Tensor<T>::record(x.shape(), std::move(out), {x},
                           [x](std::span<const T> y, std::span<const T> g) {
                             auto acc = x.grad_accumulator();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               if (y[i] > T(0)) acc[i] += g[i];
                             }
                           });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.ndim()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                                shape_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::int64_t n = shape[axis];
  const auto in = x.data();
  memory::Buffer<T> out(in.size());

  for (std::int64_t o = 0; o < outer; ++o) {
    const std::int64_t base = o * n * inner;
    for (std::int64_t i = 0; i < inner; ++i) {
      T peak = in[base + i];
      for (std::int64_t j = 1; j < n; ++j) peak = std::max(peak, in[base + j * inner + i]);
      T total = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        const T e = std::exp(in[base + j * inner + i] - peak);
        out[base + j * inner + i] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::int64_t j = 0; j < n; ++j) out[base + j * inner + i] *= inv;
    }
  }

  return Tensor<T>::record(
      shape, std::move(out), {x}, [x, outer, inner, n](std::span<const T> y, std::span<const T> g) {
        auto acc = x.grad_accumulator();
        for (std::int64_t o = 0; o < outer; ++o) {
          const std::int64_t base = o * n * inner;
          for (std::int64_t i = 0; i < inner; ++i) {
            T dot = 0;
            for (std::int64_t j = 0; j < n; ++j) {
              const auto idx = base + j * inner + i;
              dot += g[idx] * y[idx];
            }
            for (std::int64_t j = 0; j < n; ++j) {
              const auto idx = base + j * inner + i;
              acc[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  memory::Buffer<T> out{total};
  return Tensor<T>::record({1}, std::move(out), {x}, [x](std::span<const T>, std::span<const T> g) {
    auto acc = x.grad_accumulator();
    for (auto& v : acc) v += g[0];
  });
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& weights) {
  require_same_shape(x, weights, "weighted_sum");
  const auto dx = x.data();
  const auto dw = weights.data();
  T total = 0;
  for (std::size_t i = 0; i < dx.size(); ++i) total += dx[i] * dw[i];
  memory::Buffer<T> out{total};
  return Tensor<T>::record({1}, std::move(out), {x},
                           [x, weights](std::span<const T>, std::span<const T> g) {
                             auto acc = x.grad_accumulator();
                             const auto w = weights.data();
                             for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[0] * w[i];
                           });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " +
                                shape_string(shape));
  }
  memory::Buffer<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::record(shape, std::move(out), {x},
                           [x](std::span<const T>, std::span<const T> g) {
                             auto acc = x.grad_accumulator();
                             for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                           });
}

template <typename T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mean_abs_diff");
  if (a.numel() == 0) throw std::invalid_argument("mean_abs_diff: empty input");
  const auto da = a.data();
  const auto db = b.data();
  T total = 0;
  for (std::size_t i = 0; i < da.size(); ++i) total += std::abs(da[i] - db[i]);
  const T scale = T(1) / static_cast<T>(da.size());
  memory::Buffer<T> out{total * scale};
  return Tensor<T>::record({1}, std::move(out), {a, b},
                           [a, b, scale](std::span<const T>, std::span<const T> g) {
                             const auto va = a.data();
                             const auto vb = b.data();
                             if (a.requires_grad()) {
                               auto acc = a.grad_accumulator();
                               for (std::size_t i = 0; i < acc.size(); ++i)
                                 acc[i] += g[0] * scale * sign_of(va[i] - vb[i]);
                             }
                             if (b.requires_grad()) {
                               auto acc = b.grad_accumulator();
                               for (std::size_t i = 0; i < acc.size(); ++i)
                                 acc[i] -= g[0] * scale * sign_of(va[i] - vb[i]);
                             }
                           });
}

template <typename T>
Tensor<T> masked_mean_abs_diff(const Tensor<T>& pred, const Tensor<T>& target,
                               const Tensor<T>& mask) {
  require_same_shape(pred, target, "masked_mean_abs_diff");
  require_same_shape(pred, mask, "masked_mean_abs_diff");
  const auto p = pred.data();
  const auto t = target.data();
  const auto m = mask.data();
  std::size_t count = 0;
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] == T(0)) continue;
    total += std::abs(p[i] - t[i]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("masked_mean_abs_diff: mask selects no pixels");
  const T scale = T(1) / static_cast<T>(count);
  memory::Buffer<T> out{total * scale};
  return Tensor<T>::record({1}, std::move(out), {pred},
                           [pred, target, mask, scale](std::span<const T>, std::span<const T> g) {
                             auto acc = pred.grad_accumulator();
                             const auto p = pred.data();
                             const auto t = target.data();
                             const auto m = mask.data();
                             for (std::size_t i = 0; i < acc.size(); ++i) {
                               if (m[i] != T(0)) acc[i] += g[0] * scale * sign_of(p[i] - t[i]);
                             }
                           });
}

#define CIDER_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scalar_mul(const Tensor<T>&, T);                                     \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> sum(const Tensor<T>&);                                               \
  template Tensor<T> weighted_sum(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                             \
  template Tensor<T> mean_abs_diff(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> masked_mean_abs_diff(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

CIDER_INSTANTIATE_OPS(float)
CIDER_INSTANTIATE_OPS(double)

}  // namespace cider
