#include "cider/conv.hpp"

#include <cmath>

#include "gemm.hpp"

namespace cider {

namespace {

// A strided convolution relates a "wide" tensor [C,D,H,W] to a "narrow" one
// [O,OD,OH,OW]. Forward conv maps wide -> narrow; the transposed conv maps
// narrow -> wide. In both cases the weight is the matrix [O, C*kd*kh*kw].
struct Geometry {
  std::int64_t c, d, h, w;      // wide side
  std::int64_t o, od, oh, ow;   // narrow side
  std::int64_t kd, kh, kw;
  std::int64_t sd, sh, sw;
  std::int64_t pd, ph, pw;

  std::int64_t kernel_volume() const { return kd * kh * kw; }
  std::int64_t wide_plane() const { return d * h * w; }
  std::int64_t narrow_plane() const { return od * oh * ow; }
  std::int64_t col_rows() const { return c * kernel_volume(); }
};

std::string describe(const Shape& input, const Shape& weight) {
  return "input " + shape_string(input) + ", weight " + shape_string(weight);
}

std::int64_t conv_extent(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (n + 2 * p - k) / s + 1;
}

void check_kernel(const Shape& input, const Shape& weight, std::size_t first_spatial) {
  for (std::size_t i = first_spatial; i < weight.size(); ++i) {
    if (weight[i] <= 0 || weight[i] % 2 == 0) {
      throw std::invalid_argument("convolution kernel extents must be odd and positive: " +
                                  describe(input, weight));
    }
  }
}

// Builds the wide/narrow geometry. For 2D inputs the depth axis is a
// singleton with a unit kernel.
Geometry make_geometry(const Shape& input, const Shape& weight, const ConvOptions& opt,
                       bool transposed) {
  const std::size_t rank = input.size();
  if (rank != 3 && rank != 4) {
    throw std::invalid_argument("convolution expects [C,H,W] or [C,D,H,W]: " +
                                describe(input, weight));
  }
  if (weight.size() != rank + 1) {
    throw std::invalid_argument("convolution weight rank does not match input rank: " +
                                describe(input, weight));
  }
  if (opt.stride < 1 || opt.padding < 0 || opt.output_padding < 0) {
    throw std::invalid_argument("convolution stride must be >= 1 and padding >= 0");
  }
  if (transposed && rank != 4) {
    throw std::invalid_argument("transposed convolution is only defined for [C,D,H,W] inputs: " +
                                describe(input, weight));
  }
  if (!transposed && opt.output_padding != 0) {
    throw std::invalid_argument("output_padding only applies to transposed convolution");
  }
  check_kernel(input, weight, 2);

  const bool volumetric = rank == 4;
  const std::int64_t kd = volumetric ? weight[2] : 1;
  const std::int64_t kh = weight[rank - 1];
  const std::int64_t kw = weight[rank];
  const std::int64_t s = opt.stride;
  const std::int64_t p = opt.padding;
  const std::int64_t sd = volumetric ? s : 1;
  const std::int64_t pd = volumetric ? p : 0;

  Geometry g{};
  g.kd = kd;
  g.kh = kh;
  g.kw = kw;
  g.sd = sd;
  g.sh = s;
  g.sw = s;
  g.pd = pd;
  g.ph = p;
  g.pw = p;

  const std::int64_t in_d = volumetric ? input[1] : 1;
  const std::int64_t in_h = input[rank - 2];
  const std::int64_t in_w = input[rank - 1];

  if (!transposed) {
    if (weight[1] != input[0]) {
      throw std::invalid_argument("conv input channels do not match weight: " +
                                  describe(input, weight));
    }
    g.c = input[0];
    g.d = in_d;
    g.h = in_h;
    g.w = in_w;
    g.o = weight[0];
    g.od = conv_extent(in_d, kd, sd, pd);
    g.oh = conv_extent(in_h, kh, s, p);
    g.ow = conv_extent(in_w, kw, s, p);
    if (g.od <= 0 || g.oh <= 0 || g.ow <= 0) {
      throw std::invalid_argument("convolution output would be empty: " + describe(input, weight));
    }
  } else {
    if (weight[0] != input[0]) {
      throw std::invalid_argument("deconv input channels do not match weight: " +
                                  describe(input, weight));
    }
    if (opt.output_padding >= opt.stride) {
      throw std::invalid_argument("deconv output_padding must be smaller than stride");
    }
    g.o = input[0];
    g.od = in_d;
    g.oh = in_h;
    g.ow = in_w;
    g.c = weight[1];
    auto wide = [&](std::int64_t n, std::int64_t k) {
      return (n - 1) * s - 2 * p + k + opt.output_padding;
    };
    g.d = wide(in_d, kd);
    g.h = wide(in_h, kh);
    g.w = wide(in_w, kw);
    if (g.d <= 0 || g.h <= 0 || g.w <= 0) {
      throw std::invalid_argument("deconv output extent not achievable with this padding: " +
                                  describe(input, weight));
    }
    // The wide extent must map back onto the narrow one under the forward conv.
    if (conv_extent(g.d, kd, sd, pd) != in_d || conv_extent(g.h, kh, s, p) != in_h ||
        conv_extent(g.w, kw, s, p) != in_w) {
      throw std::invalid_argument("deconv geometry is not the adjoint of a valid conv: " +
                                  describe(input, weight));
    }
  }
  return g;
}

// col[(c*K + k) * P + q] = wide[c, z(q,k), y(q,k), x(q,k)] or 0 outside.
template <typename T>
void im2col(const Geometry& g, const T* wide, T* col) {
  const std::int64_t P = g.narrow_plane();
  for (std::int64_t c = 0; c < g.c; ++c) {
    const T* src_c = wide + c * g.wide_plane();
    for (std::int64_t kz = 0; kz < g.kd; ++kz)
      for (std::int64_t ky = 0; ky < g.kh; ++ky)
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const std::int64_t row = ((c * g.kd + kz) * g.kh + ky) * g.kw + kx;
          T* dst = col + row * P;
          for (std::int64_t oz = 0; oz < g.od; ++oz) {
            const std::int64_t iz = oz * g.sd - g.pd + kz;
            T* dst_z = dst + oz * g.oh * g.ow;
            if (iz < 0 || iz >= g.d) {
              std::fill(dst_z, dst_z + g.oh * g.ow, T(0));
              continue;
            }
            for (std::int64_t oy = 0; oy < g.oh; ++oy) {
              const std::int64_t iy = oy * g.sh - g.ph + ky;
              T* dst_y = dst_z + oy * g.ow;
              if (iy < 0 || iy >= g.h) {
                std::fill(dst_y, dst_y + g.ow, T(0));
                continue;
              }
              const T* src_row = src_c + (iz * g.h + iy) * g.w;
              for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                const std::int64_t ix = ox * g.sw - g.pw + kx;
                dst_y[ox] = (ix >= 0 && ix < g.w) ? src_row[ix] : T(0);
              }
            }
          }
        }
  }
}

// Adjoint of im2col: scatter-adds col entries back onto the wide tensor.
template <typename T>
void col2im(const Geometry& g, const T* col, T* wide) {
  const std::int64_t P = g.narrow_plane();
  for (std::int64_t c = 0; c < g.c; ++c) {
    T* dst_c = wide + c * g.wide_plane();
    for (std::int64_t kz = 0; kz < g.kd; ++kz)
      for (std::int64_t ky = 0; ky < g.kh; ++ky)
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const std::int64_t row = ((c * g.kd + kz) * g.kh + ky) * g.kw + kx;
          const T* src = col + row * P;
          for (std::int64_t oz = 0; oz < g.od; ++oz) {
            const std::int64_t iz = oz * g.sd - g.pd + kz;
            if (iz < 0 || iz >= g.d) continue;
            for (std::int64_t oy = 0; oy < g.oh; ++oy) {
              const std::int64_t iy = oy * g.sh - g.ph + ky;
              if (iy < 0 || iy >= g.h) continue;
              const T* src_y = src + (oz * g.oh + oy) * g.ow;
              T* dst_row = dst_c + (iz * g.h + iy) * g.w;
              for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                const std::int64_t ix = ox * g.sw - g.pw + kx;
                if (ix >= 0 && ix < g.w) dst_row[ix] += src_y[ox];
              }
            }
          }
        }
  }
}

Shape wide_shape(const Geometry& g, bool volumetric) {
  return volumetric ? Shape{g.c, g.d, g.h, g.w} : Shape{g.c, g.h, g.w};
}

Shape narrow_shape(const Geometry& g, bool volumetric) {
  return volumetric ? Shape{g.o, g.od, g.oh, g.ow} : Shape{g.o, g.oh, g.ow};
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::int64_t channels) {
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != channels)) {
    throw std::invalid_argument("bias shape " + shape_string(bias.shape()) + " does not match " +
                                std::to_string(channels) + " output channels");
  }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                       const ConvOptions& opt, bool volumetric) {
  if (static_cast<int>(x.ndim()) != (volumetric ? 4 : 3)) {
    throw std::invalid_argument(std::string(volumetric ? "conv3d" : "conv2d") +
                                ": unexpected input rank " + shape_string(x.shape()));
  }
  const Geometry g = make_geometry(x.shape(), weight.shape(), opt, false);
  check_bias(bias, g.o);
  const std::int64_t P = g.narrow_plane();
  const std::int64_t R = g.col_rows();

  memory::Buffer<T> col(static_cast<std::size_t>(R * P));
  im2col(g, x.data().data(), col.data());
  memory::Buffer<T> out(static_cast<std::size_t>(g.o * P), T(0));
  if (bias.defined()) {
    for (std::int64_t o = 0; o < g.o; ++o) std::fill_n(out.data() + o * P, P, bias.data()[o]);
  }
  detail::gemm_accumulate(g.o, P, R, weight.data().data(), R, 1, col.data(), out.data());
  col = {};

  return Tensor<T>::record(
      narrow_shape(g, volumetric), std::move(out), {x, weight, bias},
      [x, weight, bias, g](std::span<const T>, std::span<const T> grad) {
        const std::int64_t P = g.narrow_plane();
        const std::int64_t R = g.col_rows();
        if (bias.requires_grad()) {
          auto gb = bias.grad_accumulator();
          for (std::int64_t o = 0; o < g.o; ++o) {
            T s = 0;
            for (std::int64_t q = 0; q < P; ++q) s += grad[o * P + q];
            gb[o] += s;
          }
        }
        if (weight.requires_grad()) {
          memory::Buffer<T> col(static_cast<std::size_t>(R * P));
          im2col(g, x.data().data(), col.data());
          detail::gemm_nt_accumulate(g.o, R, P, grad.data(), col.data(),
                                     weight.grad_accumulator().data());
        }
        if (x.requires_grad()) {
          memory::Buffer<T> dcol(static_cast<std::size_t>(R * P), T(0));
          // dcol[R,P] = W^T[R,O] * grad[O,P]
          detail::gemm_accumulate(R, P, g.o, weight.data().data(), 1, R, grad.data(), dcol.data());
          col2im(g, dcol.data(), x.grad_accumulator().data());
        }
      });
}

}  // namespace

Shape conv_output_shape(const Shape& input, const Shape& weight, const ConvOptions& options,
                        bool transposed) {
  const Geometry g = make_geometry(input, weight, options, transposed);
  const bool volumetric = input.size() == 4;
  return transposed ? wide_shape(g, volumetric) : narrow_shape(g, volumetric);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvOptions& options) {
  return conv_forward(x, weight, bias, options, false);
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvOptions& options) {
  return conv_forward(x, weight, bias, options, true);
}

template <typename T>
Tensor<T> deconv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                   const ConvOptions& options) {
  if (x.ndim() != 4) {
    throw std::invalid_argument("deconv3d: unexpected input rank " + shape_string(x.shape()));
  }
  const Geometry g = make_geometry(x.shape(), weight.shape(), options, true);
  check_bias(bias, g.c);
  const std::int64_t P = g.narrow_plane();
  const std::int64_t R = g.col_rows();
  const std::int64_t plane = g.wide_plane();

  memory::Buffer<T> col(static_cast<std::size_t>(R * P), T(0));
  // col[R,P] = W^T[R,O] * x[O,P]
  detail::gemm_accumulate(R, P, g.o, weight.data().data(), 1, R, x.data().data(), col.data());
  memory::Buffer<T> out(static_cast<std::size_t>(g.c * plane), T(0));
  col2im(g, col.data(), out.data());
  col = {};
  if (bias.defined()) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      const T b = bias.data()[c];
      for (std::int64_t i = 0; i < plane; ++i) out[c * plane + i] += b;
    }
  }

  return Tensor<T>::record(
      wide_shape(g, true), std::move(out), {x, weight, bias},
      [x, weight, bias, g](std::span<const T>, std::span<const T> grad) {
        const std::int64_t P = g.narrow_plane();
        const std::int64_t R = g.col_rows();
        const std::int64_t plane = g.wide_plane();
        if (bias.requires_grad()) {
          auto gb = bias.grad_accumulator();
          for (std::int64_t c = 0; c < g.c; ++c) {
            T s = 0;
            for (std::int64_t i = 0; i < plane; ++i) s += grad[c * plane + i];
            gb[c] += s;
          }
        }
        if (!weight.requires_grad() && !x.requires_grad()) return;
        memory::Buffer<T> gcol(static_cast<std::size_t>(R * P));
        im2col(g, grad.data(), gcol.data());
        if (weight.requires_grad()) {
          // dW[O,R] += x[O,P] * gcol[R,P]^T
          detail::gemm_nt_accumulate(g.o, R, P, x.data().data(), gcol.data(),
                                     weight.grad_accumulator().data());
        }
        if (x.requires_grad()) {
          detail::gemm_accumulate(g.o, P, R, weight.data().data(), R, 1, gcol.data(),
                                  x.grad_accumulator().data());
        }
      });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                     T epsilon) {
  if (x.ndim() < 2) throw std::invalid_argument("batch_norm expects [C,...], got " +
                                                shape_string(x.shape()));
  const std::int64_t C = x.dim(0);
  for (const Tensor<T>* p : {&gamma, &beta, static_cast<const Tensor<T>*>(&running_mean),
                             static_cast<const Tensor<T>*>(&running_var)}) {
    if (p->ndim() != 1 || p->dim(0) != C) {
      throw std::invalid_argument("batch_norm parameter shape " + shape_string(p->shape()) +
                                  " does not match " + std::to_string(C) + " channels");
    }
  }
  const std::int64_t S = x.numel() / C;
  const auto in = x.data();
  memory::Buffer<T> mean(static_cast<std::size_t>(C));
  memory::Buffer<T> inv_std(static_cast<std::size_t>(C));

  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::int64_t c = 0; c < C; ++c) {
      const T* v = in.data() + c * S;
      double m = 0;
      for (std::int64_t i = 0; i < S; ++i) m += v[i];
      m /= static_cast<double>(S);
      double var = 0;
      for (std::int64_t i = 0; i < S; ++i) var += (v[i] - m) * (v[i] - m);
      const double biased = var / static_cast<double>(S);
      const double unbiased = S > 1 ? var / static_cast<double>(S - 1) : biased;
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(biased + static_cast<double>(epsilon)));
      rm[c] = momentum * rm[c] + (T(1) - momentum) * static_cast<T>(m);
      rv[c] = momentum * rv[c] + (T(1) - momentum) * static_cast<T>(unbiased);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      inv_std[c] = T(1) / std::sqrt(std::max(running_var.data()[c], T(0)) + epsilon);
    }
  }

  memory::Buffer<T> out(in.size());
  for (std::int64_t c = 0; c < C; ++c) {
    const T scale = gamma.data()[c] * inv_std[c];
    const T shift = beta.data()[c] - mean[c] * scale;
    const T* v = in.data() + c * S;
    T* o = out.data() + c * S;
    for (std::int64_t i = 0; i < S; ++i) o[i] = v[i] * scale + shift;
  }

  return Tensor<T>::record(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean = std::move(mean), inv_std = std::move(inv_std), training, C, S](
          std::span<const T>, std::span<const T> grad) {
        const auto in = x.data();
        for (std::int64_t c = 0; c < C; ++c) {
          const T* v = in.data() + c * S;
          const T* g = grad.data() + c * S;
          T sum_g = 0, sum_gx = 0;
          for (std::int64_t i = 0; i < S; ++i) {
            const T xhat = (v[i] - mean[c]) * inv_std[c];
            sum_g += g[i];
            sum_gx += g[i] * xhat;
          }
          if (gamma.requires_grad()) gamma.grad_accumulator()[c] += sum_gx;
          if (beta.requires_grad()) beta.grad_accumulator()[c] += sum_g;
          if (!x.requires_grad()) continue;
          auto gx = x.grad_accumulator();
          const T k = gamma.data()[c] * inv_std[c];
          if (training) {
            const T inv_n = T(1) / static_cast<T>(S);
            for (std::int64_t i = 0; i < S; ++i) {
              const T xhat = (v[i] - mean[c]) * inv_std[c];
              gx[c * S + i] += k * (g[i] - inv_n * sum_g - xhat * inv_n * sum_gx);
            }
          } else {
            for (std::int64_t i = 0; i < S; ++i) gx[c * S + i] += k * g[i];
          }
        }
      });
}

#define CIDER_INSTANTIATE_CONV(T)                                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                            const ConvOptions&);                                                \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                            const ConvOptions&);                                                \
  template Tensor<T> deconv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                              const ConvOptions&);                                              \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                Tensor<T>&, Tensor<T>&, bool, T, T);

CIDER_INSTANTIATE_CONV(float)
CIDER_INSTANTIATE_CONV(double)

}  // namespace cider
