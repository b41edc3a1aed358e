#pragma once

// Dense inner-loop kernels used by featurization, the network layers and the
// clustering code. Every kernel has a portable scalar reference in
// p4l::kernels::scalar and, on x86-64, an AVX2/FMA variant in
// p4l::kernels::avx2. The unqualified entry points dispatch at runtime to the
// best backend the CPU supports; setting P4L_SIMD=scalar in the environment
// (or calling set_backend) pins the scalar path.
//
// Matrices are row-major, `rows x cols`, stored contiguously.

#include <cstddef>
#include <span>
#include <string_view>

namespace p4l::kernels {

enum class Backend { Scalar, Avx2 };

/// True when the running CPU reports both AVX2 and FMA.
bool avx2_available() noexcept;

Backend active_backend() noexcept;
std::string_view backend_name(Backend b) noexcept;

/// Throws std::invalid_argument if the backend is not supported here.
void set_backend(Backend b);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// y = W x   (W is rows x cols)
void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,
          std::span<const double> x, std::span<double> y);

/// x_grad += W^T g
void gemv_t_acc(std::span<const double> w, std::size_t rows, std::size_t cols,
                std::span<const double> g, std::span<double> x_grad);

/// W += alpha * g x^T
void ger(double alpha, std::span<const double> g, std::span<const double> x,
         std::span<double> w);

/// out[j] = exp(-|s - c_j|^2 * inv_two_h2) for each row c_j of `centers`.
void rbf_row(std::span<const double> centers, std::size_t n_centers,
             std::span<const double> s, double inv_two_h2,
             std::span<double> out);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x,
          double* y);
void gemv_t_acc(const double* w, std::size_t rows, std::size_t cols,
                const double* g, double* x_grad);
void ger(double alpha, const double* g, std::size_t rows, const double* x,
         std::size_t cols, double* w);
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x,
          double* y);
void gemv_t_acc(const double* w, std::size_t rows, std::size_t cols,
                const double* g, double* x_grad);
void ger(double alpha, const double* g, std::size_t rows, const double* x,
         std::size_t cols, double* w);
}  // namespace avx2

}  // namespace p4l::kernels
