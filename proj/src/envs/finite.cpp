#include "p4l/envs/finite.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "p4l/core/error.hpp"

namespace p4l::envs {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_policy(const FiniteParams& env, const TabularPolicy& policy) {
  if (policy.n_states != env.n_states || policy.n_actions != env.n_actions ||
      policy.probs.size() != env.n_states * env.n_actions)
    throw std::invalid_argument("tabular policy shape does not match environment");
  for (std::size_t s = 0; s < env.n_states; ++s) {
    double sum = 0.0;
    for (std::size_t a = 0; a < env.n_actions; ++a) sum += policy(s, a);
    if (std::abs(sum - 1.0) > 1e-10)
      throw std::invalid_argument("tabular policy row does not sum to 1");
  }
}

MatrixXd policy_transition(const FiniteParams& env, const TabularPolicy& policy) {
  MatrixXd p = MatrixXd::Zero(env.n_states, env.n_states);
  for (std::size_t s = 0; s < env.n_states; ++s)
    for (std::size_t a = 0; a < env.n_actions; ++a) {
      const double w = policy(s, a);
      if (w == 0.0) continue;
      for (std::size_t s2 = 0; s2 < env.n_states; ++s2) p(s, s2) += w * env.p(s, a, s2);
    }
  return p;
}

VectorXd solve_checked(const MatrixXd& a, const VectorXd& b, const char* what) {
  Eigen::PartialPivLU<MatrixXd> lu(a);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-14)) throw ConditioningError(std::string(what) + ": singular system");
  return lu.solve(b);
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
}

}  // namespace

std::vector<double> exact_visitation(const FiniteParams& env, const TabularPolicy& policy,
                                     double gamma) {
  check_gamma(gamma);
  check_policy(env, policy);
  const std::size_t n = env.n_states;
  const MatrixXd p = policy_transition(env, policy);
  const MatrixXd a = MatrixXd::Identity(n, n) - gamma * p.transpose();
  VectorXd nu(n);
  for (std::size_t s = 0; s < n; ++s) nu(s) = env.initial[s];
  const VectorXd ds = solve_checked(a, (1.0 - gamma) * nu, "exact_visitation");
  std::vector<double> d(n * env.n_actions);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a2 = 0; a2 < env.n_actions; ++a2)
      d[s * env.n_actions + a2] = ds(s) * policy(s, a2);
  return d;
}

std::vector<double> truncated_visitation(const FiniteParams& env, const TabularPolicy& policy,
                                         double gamma, std::size_t steps) {
  check_policy(env, policy);
  const std::size_t n = env.n_states;
  const MatrixXd p = policy_transition(env, policy);
  VectorXd pt(n);
  for (std::size_t s = 0; s < n; ++s) pt(s) = env.initial[s];
  VectorXd acc = VectorXd::Zero(n);
  double w = 1.0 - gamma;
  for (std::size_t t = 0; t < steps; ++t) {
    acc += w * pt;
    pt = p.transpose() * pt;
    w *= gamma;
  }
  std::vector<double> d(n * env.n_actions);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a = 0; a < env.n_actions; ++a)
      d[s * env.n_actions + a] = acc(s) * policy(s, a);
  return d;
}

std::vector<double> exact_q(const FiniteParams& env, const TabularPolicy& policy, double gamma) {
  check_gamma(gamma);
  check_policy(env, policy);
  const std::size_t n = env.n_states;
  const std::size_t m = env.n_actions;
  const MatrixXd p = policy_transition(env, policy);
  VectorXd r_pi = VectorXd::Zero(n);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a = 0; a < m; ++a) r_pi(s) += policy(s, a) * env.r(s, a);
  const VectorXd v =
      solve_checked(MatrixXd::Identity(n, n) - gamma * p, r_pi, "exact_q");
  std::vector<double> q(n * m);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a = 0; a < m; ++a) {
      double next = 0.0;
      for (std::size_t s2 = 0; s2 < n; ++s2) next += env.p(s, a, s2) * v(s2);
      q[s * m + a] = env.r(s, a) + gamma * next;
    }
  return q;
}

double plugin_value(const FiniteParams& env, const TabularPolicy& policy,
                    const std::vector<double>& q, double gamma) {
  check_policy(env, policy);
  double out = 0.0;
  for (std::size_t s = 0; s < env.n_states; ++s)
    for (std::size_t a = 0; a < env.n_actions; ++a)
      out += env.initial[s] * policy(s, a) * q[s * env.n_actions + a];
  return (1.0 - gamma) * out;
}

double exact_value(const FiniteParams& env, const TabularPolicy& policy, double gamma) {
  return plugin_value(env, policy, exact_q(env, policy, gamma), gamma);
}

std::vector<double> optimal_q(const FiniteParams& env, double gamma, double tol,
                              std::size_t max_iters) {
  check_gamma(gamma);
  const std::size_t n = env.n_states;
  const std::size_t m = env.n_actions;
  std::vector<double> q(n * m, 0.0), next(n * m);
  std::vector<double> v(n);
  for (std::size_t it = 0; it < max_iters; ++it) {
    for (std::size_t s = 0; s < n; ++s)
      v[s] = *std::max_element(q.begin() + static_cast<std::ptrdiff_t>(s * m),
                               q.begin() + static_cast<std::ptrdiff_t>((s + 1) * m));
    double diff = 0.0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t a = 0; a < m; ++a) {
        double acc = env.r(s, a);
        for (std::size_t s2 = 0; s2 < n; ++s2) acc += gamma * env.p(s, a, s2) * v[s2];
        diff = std::max(diff, std::abs(acc - q[s * m + a]));
        next[s * m + a] = acc;
      }
    q.swap(next);
    if (diff < tol) break;
  }
  return q;
}

std::vector<double> policy_feature_integral(const LinearParams& env, const TabularPolicy& policy) {
  const std::size_t d = env.dim;
  std::vector<double> m(d * d, 0.0);
  for (std::size_t s2 = 0; s2 < env.n_states; ++s2) {
    std::vector<double> phi_pi(d, 0.0);
    for (std::size_t a = 0; a < env.n_actions; ++a)
      for (std::size_t l = 0; l < d; ++l) phi_pi[l] += policy(s2, a) * env.psi_at(s2, a, l);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l)
        m[k * d + l] += env.mu[k * env.n_states + s2] * phi_pi[l];
  }
  return m;
}

std::vector<double> linear_mdp_q_weights(const std::vector<double>& theta,
                                         const std::vector<double>& integral, double gamma) {
  check_gamma(gamma);
  const std::size_t d = theta.size();
  if (d == 0 || integral.size() != d * d)
    throw std::invalid_argument("linear_mdp_q_weights: integral must be d x d");
  MatrixXd m(d, d);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = 0; l < d; ++l) m(k, l) = integral[k * d + l];
  const double radius = (gamma * m).eigenvalues().cwiseAbs().maxCoeff();
  if (!(radius < 1.0))
    throw ConditioningError("linear_mdp_q_weights: spectral radius of gamma*M is >= 1");
  const MatrixXd a = MatrixXd::Identity(d, d) - gamma * m;
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  const double cond = sv(0) / sv(sv.size() - 1);
  if (!(cond < 1e12))
    throw ConditioningError("linear_mdp_q_weights: (I - gamma M) is ill-conditioned");
  VectorXd th(d);
  for (std::size_t k = 0; k < d; ++k) th(k) = theta[k];
  const VectorXd w = a.partialPivLu().solve(th);
  return std::vector<double>(w.data(), w.data() + d);
}

namespace {

void random_simplex(double* out, std::size_t n, RngStream& rng) {
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = -std::log(1.0 - rng.uniform());
    sum += out[k];
  }
  for (std::size_t k = 0; k < n; ++k) out[k] /= sum;
  // Push the rounding residue into the largest entry so rows sum to 1 tightly.
  double s2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) s2 += out[k];
  *std::max_element(out, out + n) += 1.0 - s2;
}

}  // namespace

FiniteParams random_finite_mdp(std::size_t n_states, std::size_t n_actions, RngStream& rng) {
  FiniteParams f;
  f.n_states = n_states;
  f.n_actions = n_actions;
  f.transition.resize(n_states * n_actions * n_states);
  f.reward.resize(n_states * n_actions);
  f.initial.resize(n_states);
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa)
    random_simplex(f.transition.data() + sa * n_states, n_states, rng);
  for (double& r : f.reward) r = rng.uniform();
  random_simplex(f.initial.data(), n_states, rng);
  return f;
}

TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, RngStream& rng) {
  TabularPolicy p{n_states, n_actions, std::vector<double>(n_states * n_actions)};
  for (std::size_t s = 0; s < n_states; ++s)
    random_simplex(p.probs.data() + s * n_actions, n_actions, rng);
  return p;
}

LinearParams random_linear_mdp(std::size_t n_states, std::size_t n_actions, std::size_t dim,
                               RngStream& rng) {
  LinearParams l;
  l.n_states = n_states;
  l.n_actions = n_actions;
  l.dim = dim;
  l.psi.resize(n_states * n_actions * dim);
  l.mu.resize(dim * n_states);
  l.theta.resize(dim);
  l.initial.resize(n_states);
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa)
    random_simplex(l.psi.data() + sa * dim, dim, rng);
  for (std::size_t k = 0; k < dim; ++k) random_simplex(l.mu.data() + k * n_states, n_states, rng);
  for (double& t : l.theta) t = rng.uniform();
  random_simplex(l.initial.data(), n_states, rng);
  return l;
}

}  // namespace p4l::envs
