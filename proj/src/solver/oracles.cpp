#include "p4l/solver/oracles.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "p4l/core/error.hpp"

namespace p4l::solver {

RbfBasis one_hot_basis(std::size_t n_states, double bandwidth) {
  RbfBasis b;
  b.n_centers = n_states;
  b.state_dim = n_states;
  b.bandwidth = bandwidth;
  b.centers.assign(n_states * n_states, 0.0);
  for (std::size_t s = 0; s < n_states; ++s) b.centers[s * n_states + s] = 1.0;
  return b;
}

std::vector<double> tabular_params(const models::NetworkSpec& spec, const RbfBasis& basis,
                                   const std::vector<double>& table) {
  if (spec.tier != models::Tier::Linear)
    throw std::invalid_argument("tabular_params: linear tier required");
  const std::size_t S = basis.size(), A = spec.n_actions;
  if (basis.state_dim != S || spec.n_features != S || table.size() != S * A)
    throw std::invalid_argument("tabular_params: shapes disagree with a one-hot basis");
  Eigen::MatrixXd Phi(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
  std::vector<double> e(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    std::fill(e.begin(), e.end(), 0.0);
    e[s] = 1.0;
    const auto phi = featurize(basis, e);
    for (std::size_t j = 0; j < S; ++j)
      Phi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = phi[j];
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(Phi);
  if (!lu.isInvertible()) throw ConditioningError("tabular_params: singular basis Gram matrix");
  std::vector<double> params(models::param_count(spec), 0.0);
  for (std::size_t a = 0; a < A; ++a) {
    Eigen::VectorXd target(static_cast<Eigen::Index>(S));
    for (std::size_t s = 0; s < S; ++s) target(static_cast<Eigen::Index>(s)) = table[s * A + a];
    const Eigen::VectorXd w = lu.solve(target);
    for (std::size_t j = 0; j < S; ++j)
      params[models::linear_index(spec, a, j, 0)] = w(static_cast<Eigen::Index>(j));
  }
  return params;
}

models::ModelBundle embed_tabular(const envs::FiniteParams& env, const std::vector<double>& q,
                                  const std::vector<double>& f,
                                  const envs::TabularPolicy& policy, std::size_t latent_dim) {
  const std::size_t S = env.n_states, A = env.n_actions;
  if (policy.n_states != S || policy.n_actions != A)
    throw std::invalid_argument("embed_tabular: policy shape mismatch");
  if (std::any_of(f.begin(), f.end(), [](double x) { return std::abs(x) > 1.0; }))
    throw std::invalid_argument("embed_tabular: f must lie in [-1, 1]");
  double q_max = 0.0;
  for (double x : q) q_max = std::max(q_max, std::abs(x));
  models::NetworkSpec spec;
  spec.tier = models::Tier::Linear;
  spec.n_features = S;
  spec.latent_dim = latent_dim;
  spec.n_actions = A;
  spec.q_bound = 2.0 * q_max + 1.0;
  spec.f_bound = 2.0;
  models::ModelBundle b = models::zero_bundle(spec, one_hot_basis(S));
  std::vector<double> logits(S * A);
  for (std::size_t k = 0; k < S * A; ++k) logits[k] = std::log(std::max(policy.probs[k], 1e-300));
  b.q_params = tabular_params(spec, b.basis, q);
  b.f_params = tabular_params(spec, b.basis, f);
  b.pi_params = tabular_params(spec, b.basis, logits);
  return b;
}

}  // namespace p4l::solver
