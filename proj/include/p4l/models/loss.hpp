#pragma once

// Reverse-mode gradients of the fixed scalar loss graphs built from the
// q/f/pi families: the empirical Bellman-weighted objective, the value term
// and the Lagrangian, plus single-node probes used by the gradient checks.

#include <cstddef>
#include <span>
#include <vector>

#include "p4l/models/network.hpp"

namespace p4l::models {

/// Latent rows u^i, N x d_u row-major.
struct LatentTable {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  LatentTable() = default;
  LatentTable(std::size_t rows, std::size_t cols, double fill = 0.0)
      : n(rows), dim(cols), data(rows * cols, fill) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  bool operator==(const LatentTable&) const = default;
};

/// Featurized transitions (phi(S), A, R, phi(S+), individual).
struct TransitionBatch {
  std::size_t n_features = 0;
  std::vector<double> phi;
  std::vector<double> phi_next;
  std::vector<int> action;
  std::vector<double> reward;
  std::vector<std::size_t> individual;

  std::size_t size() const noexcept { return action.size(); }
  std::span<const double> phi_row(std::size_t b) const {
    return {phi.data() + b * n_features, n_features};
  }
  std::span<const double> next_row(std::size_t b) const {
    return {phi_next.data() + b * n_features, n_features};
  }
  void push(std::span<const double> ph, int a, double r, std::span<const double> ph_next,
            std::size_t i);
};

/// (individual, initial state) pairs for the value term; the term is
/// scale * sum_pairs sum_a pi(a|s0; u^i) Q(s0, a; u^i).
struct InitialBatch {
  std::size_t n_features = 0;
  std::vector<double> phi;
  std::vector<std::size_t> individual;
  double scale = 1.0;

  std::size_t size() const noexcept { return individual.size(); }
  std::span<const double> phi_row(std::size_t b) const {
    return {phi.data() + b * n_features, n_features};
  }
  void push(std::span<const double> ph, std::size_t i);
};

enum class LossKind {
  Constant,
  /// sum_b Q(S_b, A_b; u)
  QValue,
  /// sum_b f(S_b, A_b; u)
  FValue,
  /// sum_b pi(A_b | S_b; u)
  PolicyProb,
  /// The whole probability vector; not a scalar, rejected.
  PolicyVector,
  /// mean_b f(S,A;u) (R + gamma sum_a pi(a|S+) Q(S+,a) - Q(S,A))
  PhiHat,
  /// scale * sum_pairs sum_a pi Q at initial states
  ValueTerm,
  /// ValueTerm + lambda (PhiHat - alpha)
  Lagrangian,
};

struct LossSpec {
  LossKind kind = LossKind::Constant;
  double gamma = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  double constant = 0.0;
};

struct GradRequest {
  bool q = true;
  bool f = true;
  bool pi = true;
  bool u = true;
};

struct Gradients {
  double loss = 0.0;
  std::vector<double> q;
  std::vector<double> f;
  std::vector<double> pi;
  /// N x d_u; rows of individuals absent from the batches stay zero.
  std::vector<double> u;
};

/// Exact gradients of the scalar loss. Throws std::invalid_argument for
/// non-scalar specs, mismatched shapes or an empty batch where one is needed.
Gradients backprop_grads(const ModelBundle& bundle, const LossSpec& spec,
                         const TransitionBatch& batch, const InitialBatch& initial,
                         const LatentTable& latents, const GradRequest& request = {});

/// Loss value only.
double evaluate_loss(const ModelBundle& bundle, const LossSpec& spec,
                     const TransitionBatch& batch, const InitialBatch& initial,
                     const LatentTable& latents);

enum class CheckTarget { QParams, FParams, PiParams, Latents };

struct FiniteDiffReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
  std::size_t n_resampled = 0;
};

/// Compares backprop_grads against central differences on up to
/// `n_coords` random coordinates of the target block at the current
/// parameters. Relative error uses max(|a|, |b|, 1e-4) as the scale. When
/// `corrupt` is set the analytic gradient is perturbed first (negative
/// control). Coordinates whose finite difference straddles a ReLU kink are
/// redrawn.
FiniteDiffReport finite_diff_check(const ModelBundle& bundle, const LossSpec& spec,
                                   const TransitionBatch& batch, const InitialBatch& initial,
                                   const LatentTable& latents, CheckTarget target,
                                   double tolerance, RngStream& rng, std::size_t n_coords = 20,
                                   bool corrupt = false);

/// True when some residual-tier pre-activation on the batches lies within
/// `margin` of zero (results of a finite difference there are unreliable).
bool near_kink(const ModelBundle& bundle, const TransitionBatch& batch,
               const InitialBatch& initial, const LatentTable& latents, double margin);

}  // namespace p4l::models
