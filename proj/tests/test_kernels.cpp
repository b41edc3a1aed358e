#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "p4l/core/rng.hpp"
#include "p4l/kernels.hpp"

using namespace p4l;
namespace k = p4l::kernels;

namespace {

std::vector<double> random_vec(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

// Backend switch for the duration of one scope.
struct BackendGuard {
  k::Backend saved = k::active_backend();
  explicit BackendGuard(k::Backend b) { k::set_backend(b); }
  ~BackendGuard() { k::set_backend(saved); }
};

}  // namespace

TEST_CASE("scalar kernels match textbook loops") {
  const std::vector<double> a{1, 2, 3}, b{4, -5, 6};
  CHECK(k::scalar::dot(a.data(), b.data(), 3) == 12.0);
  CHECK(k::scalar::squared_distance(a.data(), b.data(), 3) == 9.0 + 49.0 + 9.0);
  std::vector<double> y{1, 1, 1};
  k::scalar::axpy(2.0, a.data(), y.data(), 3);
  CHECK(y == std::vector<double>{3, 5, 7});
  const std::vector<double> w{1, 2, 3, 4, 5, 6};  // 2 x 3
  std::vector<double> out(2);
  k::scalar::gemv(w.data(), 2, 3, a.data(), out.data());
  CHECK(out == std::vector<double>{14, 32});
  std::vector<double> xg(3, 0.0);
  const std::vector<double> g{1, -1};
  k::scalar::gemv_t_acc(w.data(), 2, 3, g.data(), xg.data());
  CHECK(xg == std::vector<double>{-3, -3, -3});
  std::vector<double> w2(6, 0.0);
  k::scalar::ger(0.5, g.data(), 2, a.data(), 3, w2.data());
  CHECK(w2 == std::vector<double>{0.5, 1, 1.5, -0.5, -1, -1.5});
}

TEST_CASE("AVX2 kernels agree with the scalar reference") {
  if (!k::avx2_available()) {
    MESSAGE("AVX2/FMA not available; equivalence test skipped");
    return;
  }
  RngStream rng(42, Stream::Init);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 33u, 100u, 257u}) {
    const auto a = random_vec(rng, n), b = random_vec(rng, n);
    CHECK(rel(k::avx2::dot(a.data(), b.data(), n), k::scalar::dot(a.data(), b.data(), n)) <
          1e-13);
    CHECK(rel(k::avx2::squared_distance(a.data(), b.data(), n),
              k::scalar::squared_distance(a.data(), b.data(), n)) < 1e-13);
    auto y1 = random_vec(rng, n);
    auto y2 = y1;
    k::avx2::axpy(0.3, a.data(), y1.data(), n);
    k::scalar::axpy(0.3, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(rel(y1[i], y2[i]) < 1e-14);
  }
  for (std::size_t rows : {1u, 2u, 5u, 32u}) {
    for (std::size_t cols : {1u, 3u, 4u, 9u, 18u, 51u}) {
      const auto w = random_vec(rng, rows * cols);
      const auto x = random_vec(rng, cols);
      const auto g = random_vec(rng, rows);
      std::vector<double> y1(rows), y2(rows);
      k::avx2::gemv(w.data(), rows, cols, x.data(), y1.data());
      k::scalar::gemv(w.data(), rows, cols, x.data(), y2.data());
      for (std::size_t i = 0; i < rows; ++i) CHECK(rel(y1[i], y2[i]) < 1e-13);
      auto xg1 = random_vec(rng, cols);
      auto xg2 = xg1;
      k::avx2::gemv_t_acc(w.data(), rows, cols, g.data(), xg1.data());
      k::scalar::gemv_t_acc(w.data(), rows, cols, g.data(), xg2.data());
      for (std::size_t j = 0; j < cols; ++j) CHECK(rel(xg1[j], xg2[j]) < 1e-13);
      auto w1 = w, w2 = w;
      k::avx2::ger(-0.7, g.data(), rows, x.data(), cols, w1.data());
      k::scalar::ger(-0.7, g.data(), rows, x.data(), cols, w2.data());
      for (std::size_t i = 0; i < w1.size(); ++i) CHECK(rel(w1[i], w2[i]) < 1e-14);
    }
  }
}

TEST_CASE("dispatched rbf_row matches the scalar path on both backends") {
  RngStream rng(5, Stream::Init);
  const std::size_t J = 16, d = 4;
  const auto centers = random_vec(rng, J * d);
  const auto s = random_vec(rng, d);
  std::vector<double> expect(J);
  for (std::size_t j = 0; j < J; ++j)
    expect[j] = std::exp(-k::scalar::squared_distance(s.data(), centers.data() + j * d, d) * 0.3);
  std::vector<k::Backend> backends{k::Backend::Scalar};
  if (k::avx2_available()) backends.push_back(k::Backend::Avx2);
  for (k::Backend be : backends) {
    BackendGuard guard(be);
    std::vector<double> out(J);
    k::rbf_row(centers, J, s, 0.3, out);
    for (std::size_t j = 0; j < J; ++j) CHECK(rel(out[j], expect[j]) < 1e-13);
  }
}

TEST_CASE("backend selection") {
  CHECK(k::backend_name(k::Backend::Scalar) == "scalar");
  CHECK(k::backend_name(k::Backend::Avx2) == "avx2");
  {
    BackendGuard guard(k::Backend::Scalar);
    CHECK(k::active_backend() == k::Backend::Scalar);
  }
  if (!k::avx2_available()) CHECK_THROWS_AS(k::set_backend(k::Backend::Avx2), std::invalid_argument);
}
