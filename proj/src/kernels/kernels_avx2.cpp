// Compiled with -mavx2 -mfma. Only reached through the dispatcher after a
// runtime CPU check.
#include "p4l/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace p4l::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  const __m128d sh = _mm_unpackhi_pd(s, s);
  return _mm_cvtsd_f64(_mm_add_sd(s, sh));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d =
        _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double out = hsum(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    out += d * d;
  }
  return out;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x,
          double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(w + r * cols, x, cols);
}

void gemv_t_acc(const double* w, std::size_t rows, std::size_t cols,
                const double* g, double* x_grad) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (g[r] == 0.0) continue;
    axpy(g[r], w + r * cols, x_grad, cols);
  }
}

void ger(double alpha, const double* g, std::size_t rows, const double* x,
         std::size_t cols, double* w) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = alpha * g[r];
    if (s == 0.0) continue;
    axpy(s, x, w + r * cols, cols);
  }
}

}  // namespace p4l::kernels::avx2

#else

#include "p4l/kernels.hpp"

namespace p4l::kernels::avx2 {
double dot(const double* a, const double* b, std::size_t n) {
  return scalar::dot(a, b, n);
}
double squared_distance(const double* a, const double* b, std::size_t n) {
  return scalar::squared_distance(a, b, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  scalar::axpy(alpha, x, y, n);
}
void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x,
          double* y) {
  scalar::gemv(w, rows, cols, x, y);
}
void gemv_t_acc(const double* w, std::size_t rows, std::size_t cols,
                const double* g, double* x_grad) {
  scalar::gemv_t_acc(w, rows, cols, g, x_grad);
}
void ger(double alpha, const double* g, std::size_t rows, const double* x,
         std::size_t cols, double* w) {
  scalar::ger(alpha, g, rows, x, cols, w);
}
}  // namespace p4l::kernels::avx2

#endif
