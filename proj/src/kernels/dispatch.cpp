#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "p4l/kernels.hpp"

namespace p4l::kernels {

namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*gemv)(const double*, std::size_t, std::size_t, const double*, double*);
  void (*gemv_t_acc)(const double*, std::size_t, std::size_t, const double*,
                     double*);
  void (*ger)(double, const double*, std::size_t, const double*, std::size_t,
              double*);
};

constexpr Table kScalar{scalar::dot,  scalar::squared_distance,
                        scalar::axpy, scalar::gemv,
                        scalar::gemv_t_acc, scalar::ger};
constexpr Table kAvx2{avx2::dot,  avx2::squared_distance,
                      avx2::axpy, avx2::gemv,
                      avx2::gemv_t_acc, avx2::ger};

bool detect_avx2() noexcept {
#if (defined(__GNUC__) || defined(__clang__)) && \
    (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() noexcept {
  if (const char* env = std::getenv("P4L_SIMD")) {
    if (std::string(env) == "scalar") return Backend::Scalar;
  }
  return detect_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> b{initial_backend()};
  return b;
}

const Table& table() noexcept {
  return current().load(std::memory_order_relaxed) == Backend::Avx2 ? kAvx2
                                                                   : kScalar;
}

}  // namespace

bool avx2_available() noexcept {
  static const bool ok = detect_avx2();
  return ok;
}

Backend active_backend() noexcept { return current().load(); }

std::string_view backend_name(Backend b) noexcept {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_available())
    throw std::invalid_argument("AVX2/FMA backend not supported on this CPU");
  current().store(b);
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return table().dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return table().squared_distance(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  table().axpy(alpha, x.data(), y.data(), x.size());
}

void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> y) {
  assert(w.size() == rows * cols && x.size() == cols && y.size() == rows);
  table().gemv(w.data(), rows, cols, x.data(), y.data());
}

void gemv_t_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                std::span<const double> g, std::span<double> x_grad) {
  assert(w.size() == rows * cols && g.size() == rows && x_grad.size() == cols);
  table().gemv_t_acc(w.data(), rows, cols, g.data(), x_grad.data());
}

void ger(double alpha, std::span<const double> g, std::span<const double> x,
         std::span<double> w) {
  assert(w.size() == g.size() * x.size());
  table().ger(alpha, g.data(), g.size(), x.data(), x.size(), w.data());
}

void rbf_row(std::span<const double> centers, std::size_t n_centers,
             std::span<const double> s, double inv_two_h2,
             std::span<double> out) {
  const std::size_t d = s.size();
  assert(centers.size() == n_centers * d && out.size() == n_centers);
  const Table& t = table();
  for (std::size_t j = 0; j < n_centers; ++j)
    out[j] = std::exp(-t.squared_distance(centers.data() + j * d, s.data(), d) *
                      inv_two_h2);
}

}  // namespace p4l::kernels
