#include "p4l/baselines/baselines.hpp"

#include <Eigen/Dense>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "p4l/core/cluster.hpp"
#include "p4l/core/error.hpp"
#include "p4l/core/text.hpp"
#include "p4l/solver/groups.hpp"

namespace p4l::baselines {

std::string method_name(Method m) {
  switch (m) {
    case Method::FQI: return "FQI";
    case Method::ClusterFQI: return "ClusterFQI";
    case Method::Behavior: return "Behavior";
  }
  return "unknown";
}

namespace {

Method parse_method(std::string_view s, std::size_t line) {
  for (Method m : {Method::FQI, Method::ClusterFQI, Method::Behavior})
    if (s == method_name(m)) return m;
  throw ParseError("unknown baseline method '" + std::string(s) + "'", line);
}

}  // namespace

double LinearQ::value(std::span<const double> phi, int a) const {
  const std::size_t w1 = n_features + 1;
  const double* wa = w.data() + static_cast<std::size_t>(a) * w1;
  double acc = wa[n_features];
  for (std::size_t j = 0; j < n_features; ++j) acc += wa[j] * phi[j];
  return acc;
}

int LinearQ::greedy(std::span<const double> phi) const {
  int best = 0;
  double best_q = value(phi, 0);
  for (std::size_t a = 1; a < n_actions; ++a) {
    const double q = value(phi, static_cast<int>(a));
    if (q > best_q) {
      best_q = q;
      best = static_cast<int>(a);
    }
  }
  return best;
}

LinearQ fit_fqi(const models::TransitionBatch& batch, std::size_t n_actions, double gamma,
                const FqiOptions& opt) {
  if (opt.iters == 0) throw std::invalid_argument("fit_fqi: iters must be >= 1");
  if (!(opt.ridge > 0.0)) throw std::invalid_argument("fit_fqi: ridge must be > 0");
  if (n_actions == 0) throw std::invalid_argument("fit_fqi: no actions");
  const std::size_t J = batch.n_features, w1 = J + 1, n = batch.size();
  LinearQ q{J, n_actions, std::vector<double>(n_actions * w1, 0.0)};

  // The design per action is fixed, so each Gram matrix is factored once.
  std::vector<std::vector<std::size_t>> rows(n_actions);
  for (std::size_t b = 0; b < n; ++b) {
    const auto a = static_cast<std::size_t>(batch.action[b]);
    if (a >= n_actions) throw std::invalid_argument("fit_fqi: action out of range");
    rows[a].push_back(b);
  }
  std::vector<Eigen::MatrixXd> X(n_actions);
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> solvers(n_actions);
  for (std::size_t a = 0; a < n_actions; ++a) {
    Eigen::MatrixXd& Xa = X[a];
    Xa.resize(static_cast<Eigen::Index>(rows[a].size()), static_cast<Eigen::Index>(w1));
    for (std::size_t r = 0; r < rows[a].size(); ++r) {
      const auto phi = batch.phi_row(rows[a][r]);
      for (std::size_t j = 0; j < J; ++j) Xa(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = phi[j];
      Xa(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(J)) = 1.0;
    }
    Eigen::MatrixXd G = Xa.transpose() * Xa;
    G.diagonal().array() += opt.ridge;
    solvers[a].compute(G);
    if (solvers[a].info() != Eigen::Success) throw ConditioningError("fit_fqi: Gram factorization failed");
  }

  std::vector<double> next_max(n);
  for (std::size_t k = 0; k < opt.iters; ++k) {
    for (std::size_t b = 0; b < n; ++b) {
      const auto nx = batch.next_row(b);
      next_max[b] = q.value(nx, q.greedy(nx));
    }
    LinearQ next = q;
    for (std::size_t a = 0; a < n_actions; ++a) {
      Eigen::VectorXd y(static_cast<Eigen::Index>(rows[a].size()));
      for (std::size_t r = 0; r < rows[a].size(); ++r) {
        const std::size_t b = rows[a][r];
        y(static_cast<Eigen::Index>(r)) = batch.reward[b] + gamma * next_max[b];
      }
      const Eigen::VectorXd w = solvers[a].solve(X[a].transpose() * y);
      for (std::size_t j = 0; j < w1; ++j) next.w[a * w1 + j] = w(static_cast<Eigen::Index>(j));
    }
    q = std::move(next);
  }
  return q;
}

std::size_t BaselinePolicy::cluster_of(std::size_t individual) const {
  if (assignment.empty()) return 0;
  if (individual >= assignment.size())
    throw std::out_of_range("BaselinePolicy: individual out of range");
  return assignment[individual];
}

int BaselinePolicy::act(std::size_t individual, std::span<const double> s) const {
  const auto phi = featurize(basis, s);
  return q.at(cluster_of(individual)).greedy(phi);
}

models::TransitionBatch featurize_rows(const OfflineDataset& ds, const RbfBasis& basis,
                                       const std::vector<std::size_t>& individuals) {
  models::TransitionBatch batch;
  batch.n_features = basis.size();
  std::vector<double> phi(basis.size()), phi_next(basis.size());
  auto add = [&](std::size_t i) {
    for (const Transition& tr : ds.individual(i)) {
      featurize(basis, tr.state, phi);
      featurize(basis, tr.next_state, phi_next);
      batch.push(phi, tr.action, tr.reward, phi_next, i);
    }
  };
  if (individuals.empty())
    for (std::size_t i = 0; i < ds.n_individuals(); ++i) add(i);
  else
    for (std::size_t i : individuals) add(i);
  return batch;
}

BaselinePolicy run_fqi(const OfflineDataset& ds, const RbfBasis& basis, double gamma,
                       const FqiOptions& opt) {
  BaselinePolicy p;
  p.method = Method::FQI;
  p.basis = basis;
  p.q.push_back(fit_fqi(featurize_rows(ds, basis), ds.n_actions(), gamma, opt));
  return p;
}

BaselinePolicy run_cluster_fqi(const OfflineDataset& ds, const RbfBasis& basis,
                               const std::vector<std::size_t>& assignment, std::size_t K,
                               double gamma, const FqiOptions& opt) {
  if (K == 0) throw std::invalid_argument("run_cluster_fqi: K must be >= 1");
  if (assignment.size() != ds.n_individuals())
    throw std::invalid_argument("run_cluster_fqi: one cluster per individual required");
  std::vector<std::vector<std::size_t>> members(K);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= K) throw std::invalid_argument("run_cluster_fqi: cluster out of range");
    members[assignment[i]].push_back(i);
  }
  BaselinePolicy p;
  p.method = Method::ClusterFQI;
  p.basis = basis;
  p.assignment = assignment;
  for (std::size_t k = 0; k < K; ++k) {
    if (members[k].empty()) throw std::invalid_argument("run_cluster_fqi: empty cluster");
    p.q.push_back(fit_fqi(featurize_rows(ds, basis, members[k]), ds.n_actions(), gamma, opt));
  }
  return p;
}

BaselinePolicy run_cluster_fqi(const OfflineDataset& ds, const RbfBasis& basis, std::size_t K,
                               double gamma, const FqiOptions& opt) {
  const std::size_t N = ds.n_individuals();
  if (K == 0 || K > N) throw std::invalid_argument("run_cluster_fqi: K must be in [1, N]");
  std::vector<std::size_t> labels(N, 0);
  if (K > 1) labels = average_linkage(solver::transition_distances(ds), N, K);
  return run_cluster_fqi(ds, basis, labels, K, gamma, opt);
}

eval::McValue behavior_value(const envs::EnvParams& env, const envs::BehaviorPolicy& behavior,
                             double gamma, const eval::McOptions& options, const RngStream& rng) {
  const eval::PolicyFn fn = [&](std::size_t, std::span<const double> s, RngStream& r) {
    return behavior.act(env, std::vector<double>(s.begin(), s.end()), r);
  };
  return eval::mc_policy_value(env, fn, gamma, options, rng);
}

void write_baseline(std::ostream& os, const BaselinePolicy& p) {
  std::string buf = "baseline " + method_name(p.method) + " " + std::to_string(p.q.size()) + "\n";
  os << buf;
  write_basis(os, p.basis);
  buf.clear();
  for (const LinearQ& q : p.q) {
    buf += "linear_q " + std::to_string(q.n_features) + " " + std::to_string(q.n_actions) + "\n";
    text::write_block(buf, "w", q.w);
  }
  buf += "assignment " + std::to_string(p.assignment.size());
  for (std::size_t a : p.assignment) buf += ' ' + std::to_string(a);
  buf += '\n';
  os << buf;
}

BaselinePolicy read_baseline(std::istream& is) {
  std::size_t line = 0;
  std::string l;
  auto next = [&](const char* what) {
    if (!std::getline(is, l)) throw ParseError(std::string("missing ") + what, line + 1);
    ++line;
    return text::split(text::trim(l), ' ');
  };
  auto head = next("baseline header");
  if (head.size() != 3 || head[0] != "baseline") throw ParseError("malformed baseline header", line);
  BaselinePolicy p;
  p.method = parse_method(head[1], line);
  const auto n_q = text::parse_int<std::size_t>(head[2], line);
  p.basis = read_basis(is, line);
  for (std::size_t k = 0; k < n_q; ++k) {
    const auto f = next("linear_q header");
    if (f.size() != 3 || f[0] != "linear_q") throw ParseError("malformed linear_q header", line);
    LinearQ q;
    q.n_features = text::parse_int<std::size_t>(f[1], line);
    q.n_actions = text::parse_int<std::size_t>(f[2], line);
    q.w = text::read_block(is, line, "w");
    if (q.w.size() != q.n_actions * (q.n_features + 1) || q.n_features != p.basis.size())
      throw SchemaError("linear_q weights disagree with their header");
    p.q.push_back(std::move(q));
  }
  const auto a = next("assignment");
  if (a.size() < 2 || a[0] != "assignment") throw ParseError("malformed assignment", line);
  const auto n = text::parse_int<std::size_t>(a[1], line);
  if (a.size() != n + 2) throw ParseError("assignment length mismatch", line);
  for (std::size_t i = 0; i < n; ++i) {
    p.assignment.push_back(text::parse_int<std::size_t>(a[i + 2], line));
    if (p.assignment.back() >= p.q.size()) throw SchemaError("assignment names a missing cluster");
  }
  if (p.q.empty()) throw SchemaError("baseline has no Q functions");
  return p;
}

}  // namespace p4l::baselines
