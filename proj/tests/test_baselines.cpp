#include <cmath>
#include <sstream>

#include "doctest.h"
#include "p4l/baselines/baselines.hpp"
#include "p4l/core/collect.hpp"
#include "p4l/core/error.hpp"
#include "p4l/solver/oracles.hpp"

using namespace p4l;
using namespace p4l::baselines;

namespace {

envs::BehaviorPolicy uniform_table(std::size_t S, std::size_t A) {
  envs::BehaviorPolicy b;
  b.kind = envs::BehaviorKind::Tabular;
  b.table.assign(S * A, 1.0 / static_cast<double>(A));
  return b;
}

std::vector<double> one_hot(std::size_t S, std::size_t s) {
  std::vector<double> e(S, 0.0);
  e[s] = 1.0;
  return e;
}

std::size_t state_of(const std::vector<double>& s) {
  std::size_t k = 0;
  while (s[k] < 0.5) ++k;
  return k;
}

/// Maximum-likelihood finite MDP of a dataset on one-hot observations.
envs::FiniteParams empirical_mdp(const OfflineDataset& ds, std::size_t S, std::size_t A) {
  envs::FiniteParams e;
  e.n_states = S;
  e.n_actions = A;
  e.transition.assign(S * A * S, 0.0);
  e.reward.assign(S * A, 0.0);
  e.initial.assign(S, 1.0 / static_cast<double>(S));
  std::vector<double> n(S * A, 0.0);
  for (const Transition& tr : ds.transitions()) {
    const std::size_t s = state_of(tr.state), a = static_cast<std::size_t>(tr.action);
    n[s * A + a] += 1.0;
    e.reward[s * A + a] += tr.reward;
    e.transition[(s * A + a) * S + state_of(tr.next_state)] += 1.0;
  }
  for (std::size_t k = 0; k < S * A; ++k) {
    REQUIRE(n[k] > 0.0);
    e.reward[k] /= n[k];
    for (std::size_t s2 = 0; s2 < S; ++s2) e.transition[k * S + s2] /= n[k];
  }
  return e;
}

}  // namespace

TEST_CASE("gamma = 0 regresses the reward") {
  RngStream rng(1, Stream::Init);
  const auto env = envs::random_finite_mdp(3, 2, rng);
  const auto ds = collect_dataset({{"g", env, 4}}, {uniform_table(3, 2)}, 50,
                                  RngStream(2, Stream::Data));
  const auto basis = solver::one_hot_basis(3);
  const auto q = fit_fqi(featurize_rows(ds, basis), 2, 0.0, FqiOptions{5, 1e-10});
  for (std::size_t s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a)
      CHECK(q.value(featurize(basis, one_hot(3, s)), a) == doctest::Approx(env.r(s, a)).epsilon(1e-6));
}

TEST_CASE("FQI converges to the empirical value-iteration fixed point") {
  RngStream rng(3, Stream::Init);
  for (int trial = 0; trial < 3; ++trial) {
    const auto env = envs::random_finite_mdp(2, 2, rng);
    const auto ds = collect_dataset({{"g", env, 5}}, {uniform_table(2, 2)}, 40,
                                    RngStream(4 + trial, Stream::Data));
    const auto basis = solver::one_hot_basis(2);
    const auto q = fit_fqi(featurize_rows(ds, basis), 2, 0.8, FqiOptions{300, 1e-12});
    const auto qstar = envs::optimal_q(empirical_mdp(ds, 2, 2), 0.8);
    for (std::size_t s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a)
        CHECK(std::abs(q.value(featurize(basis, one_hot(2, s)), a) - qstar[s * 2 + a]) < 1e-6);
  }
}

TEST_CASE("linear Q greedy ties go to the lowest action") {
  LinearQ q{1, 3, {0.0, 1.0, 0.0, 2.0, 0.0, 2.0}};
  const std::vector<double> phi{5.0};
  CHECK(q.value(phi, 1) == 2.0);
  CHECK(q.greedy(phi) == 1);
}

TEST_CASE("cluster FQI with K = 1 equals pooled FQI") {
  ExperimentConfig c;
  c.groups = simple_groups(2);
  const auto ds = collect_dataset(c.groups, {resolve_behavior(c)}, 30, RngStream(5, Stream::Data));
  RngStream frng(5, Stream::Features);
  const auto basis = fit_rbf_basis(ds.pooled_states(), 2, 6, frng);
  const FqiOptions opt{20, 1e-4};
  const auto pooled = run_fqi(ds, basis, 0.8, opt);
  const auto one = run_cluster_fqi(ds, basis, 1, 0.8, opt);
  REQUIRE(one.q.size() == 1);
  CHECK(one.q[0] == pooled.q[0]);
  CHECK(one.cluster_of(5) == 0);
  CHECK(pooled.cluster_of(5) == 0);
}

TEST_CASE("cluster FQI with the true assignment fits each group alone") {
  ExperimentConfig c;
  c.groups = simple_groups(3);
  const auto ds = collect_dataset(c.groups, {resolve_behavior(c)}, 30, RngStream(6, Stream::Data));
  RngStream frng(6, Stream::Features);
  const auto basis = fit_rbf_basis(ds.pooled_states(), 2, 6, frng);
  std::vector<std::size_t> truth;
  for (int g : ds.groups()) truth.push_back(static_cast<std::size_t>(g));
  const FqiOptions opt{20, 1e-4};
  const auto p = run_cluster_fqi(ds, basis, truth, 3, 0.8, opt);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (truth[i] == k) members.push_back(i);
    CHECK(p.q[k] == fit_fqi(featurize_rows(ds, basis, members), 2, 0.8, opt));
  }
  const std::vector<double> s{0.3, -0.4};
  CHECK(p.act(4, s) == p.q[truth[4]].greedy(featurize(basis, s)));

  const auto auto_k = run_cluster_fqi(ds, basis, 3, 0.8, opt);
  CHECK(auto_k.q.size() == 3);
  CHECK(auto_k.assignment.size() == 9);
  CHECK_THROWS_AS(run_cluster_fqi(ds, basis, 10, 0.8, opt), std::invalid_argument);
  std::vector<std::size_t> gap(9, 0);
  gap[0] = 2;
  CHECK_THROWS_AS(run_cluster_fqi(ds, basis, gap, 3, 0.8, opt), std::invalid_argument);
}

TEST_CASE("FQI rejects bad options") {
  models::TransitionBatch b;
  b.n_features = 1;
  CHECK_THROWS_AS(fit_fqi(b, 2, 0.8, FqiOptions{0, 1e-4}), std::invalid_argument);
  CHECK_THROWS_AS(fit_fqi(b, 2, 0.8, FqiOptions{5, 0.0}), std::invalid_argument);
}

TEST_CASE("behavior value") {
  envs::FiniteParams c;
  c.n_states = 1;
  c.n_actions = 2;
  c.transition = {1.0, 1.0};
  c.reward = {1.0, 1.0};
  c.initial = {1.0};
  eval::McOptions opt;
  opt.n_traj = 10;
  opt.horizon = 20;
  const auto v = behavior_value(c, uniform_table(1, 2), 0.8, opt, RngStream(7, Stream::Eval));
  CHECK(v.value == doctest::Approx(1.0 - std::pow(0.8, 20)).epsilon(1e-12));

  RngStream rng(8, Stream::Init);
  const auto env = envs::random_finite_mdp(4, 2, rng);
  const auto beh = uniform_table(4, 2);
  envs::TabularPolicy pi{4, 2, beh.table};
  opt.n_traj = 4000;
  opt.horizon = 100;
  const auto m = behavior_value(env, beh, 0.8, opt, RngStream(9, Stream::Eval));
  CHECK(std::abs(m.value - envs::exact_value(env, pi, 0.8)) < 3.0 * m.stderr_value);
}

TEST_CASE("baseline serialization round trip") {
  ExperimentConfig c;
  c.groups = simple_groups(2);
  const auto ds = collect_dataset(c.groups, {resolve_behavior(c)}, 20, RngStream(10, Stream::Data));
  RngStream frng(10, Stream::Features);
  const auto basis = fit_rbf_basis(ds.pooled_states(), 2, 5, frng);
  const auto p = run_cluster_fqi(ds, basis, 2, 0.8, FqiOptions{10, 1e-4});
  std::stringstream ss;
  write_baseline(ss, p);
  const auto back = read_baseline(ss);
  CHECK(back == p);

  std::stringstream bad("baseline Nope 1\n");
  CHECK_THROWS_AS(read_baseline(bad), ParseError);
  std::stringstream truncated("baseline FQI 1\n");
  CHECK_THROWS(read_baseline(truncated));
  CHECK(method_name(Method::ClusterFQI) == "ClusterFQI");
}
