#pragma once

// Exact oracles for tabular and linear MDPs.

#include <cstddef>
#include <vector>

#include "p4l/core/rng.hpp"
#include "p4l/envs/envs.hpp"

namespace p4l::envs {

/// Row-stochastic policy table pi[s][a], row-major.
struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;

  double operator()(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }
};

/// Discounted visitation d_pi(s,a) = (1 - gamma) sum_t gamma^t p_t(s,a),
/// returned row-major [s][a]. Solves (I - gamma P_pi^T) d_s = (1 - gamma) nu
/// for the state occupancy by LU with partial pivoting, then d(s,a) =
/// d_s(s) pi(a|s). Throws ConditioningError if the system is singular.
std::vector<double> exact_visitation(const FiniteParams& env, const TabularPolicy& policy,
                                     double gamma);

/// Same quantity by truncating the series at `steps` terms (test oracle).
std::vector<double> truncated_visitation(const FiniteParams& env, const TabularPolicy& policy,
                                         double gamma, std::size_t steps);

/// Q_pi as [s][a], by solving the Bellman equation directly.
std::vector<double> exact_q(const FiniteParams& env, const TabularPolicy& policy, double gamma);

/// J(pi) = (1 - gamma) E_{S0 ~ nu} Q_pi(S0, pi(S0)).
double exact_value(const FiniteParams& env, const TabularPolicy& policy, double gamma);

/// Plug-in value (1 - gamma) E_{S0 ~ nu} Q(S0, pi(S0)) of an arbitrary table Q[s][a].
double plugin_value(const FiniteParams& env, const TabularPolicy& policy,
                    const std::vector<double>& q, double gamma);

/// Optimal Q* by value iteration to tolerance.
std::vector<double> optimal_q(const FiniteParams& env, double gamma, double tol = 1e-13,
                              std::size_t max_iters = 100000);

/// Policy feature integral M = sum_{s'} mu(s') phi_pi(s')^T (dim x dim,
/// row-major) where phi_pi(s') = sum_a pi(a|s') psi(s', a).
std::vector<double> policy_feature_integral(const LinearParams& env, const TabularPolicy& policy);

/// Closed-form Q weights of a linear MDP: w = (I - gamma M)^{-1} theta, so
/// Q(s,a) = psi(s,a)^T w. In the scalar case this is theta / (1 - gamma M).
/// Requires spectral radius of gamma M below one; throws ConditioningError
/// when that fails or the system's condition number exceeds 1e12.
std::vector<double> linear_mdp_q_weights(const std::vector<double>& theta,
                                         const std::vector<double>& integral, double gamma);

/// Random instances used by the oracle sweeps.
FiniteParams random_finite_mdp(std::size_t n_states, std::size_t n_actions, RngStream& rng);
TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, RngStream& rng);
LinearParams random_linear_mdp(std::size_t n_states, std::size_t n_actions, std::size_t dim,
                               RngStream& rng);

}  // namespace p4l::envs
