#pragma once

#include <cstddef>

// Compute kernels behind the tape ops. Each kernel accumulates per output
// element in a fixed serial order, so results are bit-identical for any
// thread count; OpenMP only splits independent output elements. The serial
// reference implementations in kernels::ref are kept for tests and for the
// bench_kernels comparison target.

namespace rt::kernels {

// Work thresholds below which a parallel region costs more than the loop.
inline constexpr std::size_t kMatmulParFlops = 1u << 15;
inline constexpr std::size_t kApplyParSize = 1u << 15;
inline constexpr std::size_t kScanParCols = 64;

namespace ref {

/// C[m x n] = A[m x k] * B[k x n], plain dot-product loops.
template <class T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
      c[i * n + j] = acc;
    }
}

/// C[m x n] = A[m x k] * B[n x k]^T.
template <class T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[j * k + l];
      c[i * n + j] = acc;
    }
}

/// C[m x n] (+)= A[k x m]^T * B[k x n].
template <class T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t l = 0; l < k; ++l) acc += a[l * m + i] * b[l * n + j];
      if (accumulate)
        c[i * n + j] += acc;
      else
        c[i * n + j] = acc;
    }
}

}  // namespace ref

template <class T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k * n >= kMatmulParFlops)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
      c[i * n + j] = acc;
    }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k * n >= kMatmulParFlops)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[j * k + l];
      c[i * n + j] = acc;
    }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k * n >= kMatmulParFlops)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t l = 0; l < k; ++l) acc += a[l * m + i] * b[l * n + j];
      if (accumulate)
        c[i * n + j] += acc;
      else
        c[i * n + j] = acc;
    }
}

/// y[i] = f(x[i]).
template <class T, class F>
void apply_unary(const T* x, T* y, std::size_t n, F f) {
#pragma omp parallel for schedule(static) if (n >= kApplyParSize)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) y[i] = f(x[i]);
}

/// y[i] = f(a[i], b[i]).
template <class T, class F>
void apply_binary(const T* a, const T* b, T* y, std::size_t n, F f) {
#pragma omp parallel for schedule(static) if (n >= kApplyParSize)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) y[i] = f(a[i], b[i]);
}

/// y[i] += f(i).
template <class T, class F>
void accumulate_indexed(T* y, std::size_t n, F f) {
#pragma omp parallel for schedule(static) if (n >= kApplyParSize)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) y[i] += f(i);
}

}  // namespace rt::kernels
