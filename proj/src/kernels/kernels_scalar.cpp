#include "p4l/kernels.hpp"

namespace p4l::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
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

}  // namespace p4l::kernels::scalar
