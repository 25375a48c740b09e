#pragma once

#include <algorithm>
#include <cstdint>

// Small dense matrix kernels backing convolution. All matrices row-major.
// Summation order is fixed, so results are reproducible run to run.
namespace cider::detail {

/// C[M,N] += op(A)[M,K] * B[K,N], where op(A)(i,k) = A[i*a_row + k*a_col].
template <typename T>
void gemm_accumulate(std::int64_t M, std::int64_t N, std::int64_t K, const T* __restrict A,
                     std::int64_t a_row, std::int64_t a_col, const T* __restrict B,
                     T* __restrict C) {
  constexpr std::int64_t kRows = 4;
  constexpr std::int64_t kCols = 512;
  for (std::int64_t j0 = 0; j0 < N; j0 += kCols) {
    const std::int64_t cols = std::min(kCols, N - j0);
    std::int64_t i0 = 0;
    for (; i0 + kRows <= M; i0 += kRows) {
      T* __restrict c0 = C + (i0 + 0) * N + j0;
      T* __restrict c1 = C + (i0 + 1) * N + j0;
      T* __restrict c2 = C + (i0 + 2) * N + j0;
      T* __restrict c3 = C + (i0 + 3) * N + j0;
      for (std::int64_t k = 0; k < K; ++k) {
        const T a0 = A[(i0 + 0) * a_row + k * a_col];
        const T a1 = A[(i0 + 1) * a_row + k * a_col];
        const T a2 = A[(i0 + 2) * a_row + k * a_col];
        const T a3 = A[(i0 + 3) * a_row + k * a_col];
        const T* __restrict b = B + k * N + j0;
        for (std::int64_t j = 0; j < cols; ++j) {
          const T bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i0 < M; ++i0) {
      T* __restrict c = C + i0 * N + j0;
      for (std::int64_t k = 0; k < K; ++k) {
        const T a = A[i0 * a_row + k * a_col];
        const T* __restrict b = B + k * N + j0;
        for (std::int64_t j = 0; j < cols; ++j) c[j] += a * b[j];
      }
    }
  }
}

template <typename T>
T dot(const T* __restrict a, const T* __restrict b, std::int64_t n) {
  constexpr int kLanes = 16;
  T lanes[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  T total = 0;
  for (; i < n; ++i) total += a[i] * b[i];
  for (int l = 0; l < kLanes; ++l) total += lanes[l];
  return total;
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt_accumulate(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B,
                        T* C) {
  for (std::int64_t i = 0; i < M; ++i) {
    for (std::int64_t j = 0; j < N; ++j) C[i * N + j] += dot(A + i * K, B + j * K, K);
  }
}

}  // namespace cider::detail
