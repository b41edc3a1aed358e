#pragma once

// Penalized pessimistic personalized policy learning: the empirical
// Bellman-weighted objective, the multi-centroid penalty, the three block
// updates, the ADMM latent step, the multiplier update and the outer loop.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "p4l/core/config.hpp"
#include "p4l/core/dataset.hpp"
#include "p4l/core/rng.hpp"
#include "p4l/models/loss.hpp"
#include "p4l/models/network.hpp"

namespace p4l::solver {

using models::InitialBatch;
using models::LatentTable;
using models::ModelBundle;
using models::TransitionBatch;

/// Featurized dataset plus the fixed initial-state sample used for the
/// value term. Every individual is paired with every initial state.
struct TrainingData {
  std::size_t n_individuals = 0;
  std::size_t horizon = 0;
  std::size_t n_actions = 0;
  TransitionBatch transitions;
  std::size_t n_initial = 0;
  std::vector<double> initial_phi;  // n_initial x J

  std::size_t n_features() const noexcept { return transitions.n_features; }
  std::size_t n_pairs() const noexcept { return n_individuals * n_initial; }
  std::span<const double> initial_row(std::size_t m) const {
    return {initial_phi.data() + m * n_features(), n_features()};
  }

  TransitionBatch rows(std::span<const std::size_t> idx) const;
  /// Pair p couples individual p / n_initial with initial state p % n_initial.
  InitialBatch pairs(std::span<const std::size_t> idx, double scale) const;
  /// Every pair with scale (1 - gamma) / n_initial: the exact value term.
  InitialBatch all_pairs(double gamma) const;
};

/// Featurizes every transition; the initial sample is the observed S_0 of
/// each individual followed by the rows of `extra_initial` (n x d_s).
TrainingData prepare_training_data(const OfflineDataset& dataset, const RbfBasis& basis,
                                   const std::vector<double>& extra_initial = {});

/// mean_b f(S,A;u) (R + gamma sum_a pi(a|S+;u) Q(S+,a;u) - Q(S,A;u)).
/// Throws std::invalid_argument on an empty batch.
double phi_hat(const ModelBundle& bundle, const LatentTable& latents,
               const TransitionBatch& batch, double gamma);

/// (1 - gamma) sum_i mean_m sum_a pi(a|s_m;u^i) Q(s_m,a;u^i).
double value_term(const ModelBundle& bundle, const LatentTable& latents,
                  const TrainingData& data, double gamma);

/// value_term + lambda (Phi_hat - alpha) on the full data, taking the
/// bundle's f as the maximizer. Throws std::invalid_argument if lambda < 0.
double lagrangian(const ModelBundle& bundle, const LatentTable& latents, double lambda,
                  double alpha, const TrainingData& data, double gamma);

/// mu sum_i min_k |u^i - v^k|^2 with v given as K x d_u rows.
double penalty(const LatentTable& u, const std::vector<double>& v, std::size_t K, double mu);
/// Gradient of the penalty in u (nearest centroid, lowest index on ties).
std::vector<double> penalty_grad(const LatentTable& u, const std::vector<double>& v,
                                 std::size_t K, double mu);

struct InnerOptions {
  std::size_t budget = 200;
  double lr = 0.5;
  /// 0 means full batch.
  std::size_t minibatch = 256;
  std::size_t pairs_per_step = 512;
  double tol = 1e-4;
  std::size_t patience = 5;
  /// Steps per convergence check; a check compares successive window means.
  std::size_t check_every = 10;
};

struct InnerReport {
  double objective = 0.0;
  std::size_t steps = 0;
  bool converged = false;
};

/// Per-row quantities of the frozen blocks, memoized while one block is
/// optimized. Each loop starts with reset().
class FrozenCache {
 public:
  FrozenCache() = default;
  explicit FrozenCache(const TrainingData& data);
  void reset();

  /// Minibatch objective and gradient of Phi_hat in f.
  double f_grad(const ModelBundle& bundle, const LatentTable& latents, double gamma,
                std::span<const std::size_t> rows, std::vector<double>& grad);
  /// value (pairs, scaled) + lambda Phi_hat (rows); gradient in q.
  double q_grad(const ModelBundle& bundle, const LatentTable& latents, double gamma,
                double lambda, std::span<const std::size_t> rows,
                std::span<const std::size_t> pairs, double pair_scale, std::vector<double>& grad);
  /// Same objective; gradient in pi.
  double pi_grad(const ModelBundle& bundle, const LatentTable& latents, double gamma,
                 double lambda, std::span<const std::size_t> rows,
                 std::span<const std::size_t> pairs, double pair_scale,
                 std::vector<double>& grad);

 private:
  struct Memo {
    std::size_t width = 0;
    std::vector<double> values;
    std::vector<std::uint32_t> stamp;
    void resize(std::size_t n, std::size_t w);
  };
  const TrainingData* data_ = nullptr;
  std::uint32_t epoch_ = 1;
  Memo delta_, f_sa_, pi_next_, q_next_, pair_pi_, pair_q_;
  models::Workspace ws_, ws2_;
  std::vector<double> d_raw_, probs_, tmp_;

  bool fresh(Memo& m, std::size_t k);
};

struct MaxPhiResult {
  double value = 0.0;
  std::vector<double> f_params;
  InnerReport report;
  bool flipped = false;
};

/// Gradient ascent on Phi_hat in f from the bundle's f. With `symmetric`
/// the ascent is also run from -f (output layer negated) and the better
/// branch is returned. The value is evaluated on the full data and is a
/// lower bound on the true maximum.
MaxPhiResult max_phi_hat(const ModelBundle& bundle, const LatentTable& latents,
                         const TrainingData& data, double gamma, const InnerOptions& options,
                         RngStream& rng, bool symmetric = true);

/// f <- f + lr grad_f Phi_hat. Returns the pre-step objective.
double sgd_update_f(ModelBundle& bundle, const LatentTable& latents, const TransitionBatch& batch,
                    double gamma, double lr);
/// q <- q - lr grad_q [value + lambda (Phi_hat - alpha)].
double sgd_update_q(ModelBundle& bundle, const LatentTable& latents, double lambda, double alpha,
                    const TransitionBatch& batch, const InitialBatch& initial, double gamma,
                    double lr);
/// pi <- pi + lr grad_pi [value + lambda (Phi_hat - alpha)]. The latent
/// gradient of the same objective is returned, not applied.
std::vector<double> sgd_update_pi(ModelBundle& bundle, const LatentTable& latents, double lambda,
                                  double alpha, const TransitionBatch& batch,
                                  const InitialBatch& initial, double gamma, double lr);

/// u, v (K x d_u centroids), w and the scaled-form multipliers eta.
struct LatentBlocks {
  LatentTable u;
  std::size_t K = 0;
  std::vector<double> v;
  LatentTable w;
  LatentTable eta;

  std::size_t n() const noexcept { return u.n; }
  std::size_t dim() const noexcept { return u.dim; }
  /// |u - w|_F
  double residual() const;
  /// Nearest centroid of each u row.
  std::vector<std::size_t> assignment() const;
  void validate() const;
  bool operator==(const LatentBlocks&) const = default;
};

/// u = init, w = u, eta = 0, v from K-means of u.
LatentBlocks make_latent_blocks(LatentTable init, std::size_t K, RngStream& rng);

/// Exact minimizer of mu |w - v_k|^2 + (rho/2)|z - w|^2 over w.
void prox_w(std::span<const double> z, std::span<const double> v_k, double rho, double mu,
            std::span<double> w);

/// P_mu(w, v) + (rho/2) |u - w + eta/rho|_F^2.
double vw_block_objective(const LatentBlocks& blocks, double rho, double mu);

/// (v, w) block: K-means on z = u + eta/rho (warm-started from the current
/// v), then the closed-form prox per row.
void update_vw(LatentBlocks& blocks, double rho, double mu, RngStream& rng);

struct AdmmOptions {
  double rho = 1.0;
  double mu = 1.0;
  double lr_u = 0.05;
  std::size_t u_steps = 10;
  /// Stratified sample sizes per individual for the u-block gradient.
  std::size_t rows_per_individual = 16;
  std::size_t pairs_per_individual = 16;
};

/// One ADMM sweep: u ascent on L - (rho/2)|u - w + eta/rho|^2, the (v, w)
/// block, then eta += rho (u - w). Throws DivergenceError on non-finite
/// values.
void admm_step(LatentBlocks& blocks, const ModelBundle& bundle, double lambda, double alpha,
               const TrainingData& data, double gamma, const AdmmOptions& options,
               RngStream& rng);

/// Paper sign: max(0, lambda - lr gap). Ascent: max(0, lambda + lr gap).
double update_lambda(double lambda, double gap, double lr, LambdaUpdate rule);

struct HistoryRow {
  std::size_t iteration = 0;
  double value = 0.0;
  /// max_f Phi_hat reached in step 1, before Q and pi move.
  double max_phi = 0.0;
  double phi_hat = 0.0;
  double gap = 0.0;
  double penalty = 0.0;
  double residual = 0.0;
  double lambda = 0.0;
  double lagrangian = 0.0;
  std::size_t f_steps = 0;
  std::size_t q_steps = 0;
  std::size_t pi_steps = 0;
};

struct SolverState {
  double lambda = 0.0;
  double alpha = 0.0;
  double mu = 0.0;
  double rho = 1.0;
  double lr_f = 0.0;
  double lr_q = 0.0;
  double lr_pi = 0.0;
  double lr_lambda = 0.0;
  std::size_t iteration = 0;
  std::vector<HistoryRow> history;
};

struct P4LResult {
  ModelBundle bundle;
  LatentBlocks latents;
  SolverState state;
  std::vector<std::size_t> assignment;
  bool converged = false;
};

/// Network spec implied by a config and dataset.
models::NetworkSpec network_spec(const ExperimentConfig& config, std::size_t n_features,
                                 std::size_t n_actions, double reward_bound);

/// Algorithm inputs beyond the dataset. `extra_initial` holds fresh draws
/// from nu (n x d_s); `initial_latents` overrides the configured latent
/// initialization when non-empty.
struct RunInputs {
  const OfflineDataset* dataset = nullptr;
  RbfBasis basis;
  std::vector<double> extra_initial;
  LatentTable initial_latents;
  std::size_t K = 1;
};

/// Runs the outer loop until the value term's relative change stays below
/// outer_tol for `patience` iterations (and the ADMM residual is below
/// admm_tol) or outer_iters is exhausted. Throws DivergenceError with the
/// history trace when an objective becomes non-finite.
P4LResult run_p4l(const RunInputs& inputs, const ExperimentConfig& config, std::uint64_t seed);

/// Convenience: fits the basis from the dataset (Features stream of `seed`)
/// and uses no extra initial states.
P4LResult run_p4l(const OfflineDataset& dataset, const ExperimentConfig& config,
                  std::uint64_t seed);

/// CSV: iteration,value,phi_hat,gap,penalty,residual,lambda,lagrangian,...
void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& history);

/// Checkpoint: the model bundle followed by a "latents" block.
void write_result(std::ostream& os, const P4LResult& result);
P4LResult read_result(std::istream& is);

}  // namespace p4l::solver
