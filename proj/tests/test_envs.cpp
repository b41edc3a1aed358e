#include <cmath>
#include <numeric>

#include "doctest.h"
#include "p4l/core/error.hpp"
#include "p4l/envs/envs.hpp"
#include "p4l/envs/finite.hpp"

using namespace p4l;
using namespace p4l::envs;

namespace {

SimpleParams quiet(double c1, double c2) {
  SimpleParams p{c1, c2};
  p.noise_sd = 0.0;
  p.reward_noise = 0.0;
  return p;
}

std::vector<double> step_obs(const EnvParams& p, std::vector<double> s, int a) {
  RngStream rng(1, Stream::Data);
  return env_step(p, env_start_at(p, std::move(s)), a, rng).state.observation;
}

// Bellman evaluation of a tabular policy by plain iteration.
std::vector<double> iterate_q(const FiniteParams& env, const TabularPolicy& pi, double gamma,
                              std::size_t iters) {
  const std::size_t S = env.n_states, A = env.n_actions;
  std::vector<double> q(S * A, 0.0), next(S * A);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        double acc = env.r(s, a);
        for (std::size_t s2 = 0; s2 < S; ++s2) {
          double v = 0.0;
          for (std::size_t a2 = 0; a2 < A; ++a2) v += pi(s2, a2) * q[s2 * A + a2];
          acc += gamma * env.p(s, a, s2) * v;
        }
        next[s * A + a] = acc;
      }
    q.swap(next);
  }
  return q;
}

}  // namespace

TEST_CASE("simple env reset draws from N(0, I)") {
  RngStream rng(3, Stream::Data);
  const EnvParams p = SimpleParams{};
  const int n = 10000;
  double m[2] = {0, 0}, v[2] = {0, 0};
  for (int k = 0; k < n; ++k) {
    const auto s = env_reset(p, rng);
    CHECK_FALSE(s.terminated);
    for (int j = 0; j < 2; ++j) {
      m[j] += s.observation[j];
      v[j] += s.observation[j] * s.observation[j];
    }
  }
  for (int j = 0; j < 2; ++j) {
    const double mean = m[j] / n;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(v[j] / n - mean * mean - 1.0) < 0.05);
  }
}

TEST_CASE("simple env transition and reward formulas") {
  const EnvParams a = quiet(0.0, -0.6);
  const auto s1 = step_obs(a, {1.0, 0.0}, 1);
  CHECK(s1[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s1[1] == doctest::Approx(-0.6).epsilon(1e-15));
  RngStream rng(1, Stream::Data);
  CHECK(env_step(a, env_start_at(a, {0.0, 0.0}), 1, rng).reward == doctest::Approx(0.45));
  const EnvParams z = quiet(0.0, 0.0);
  CHECK(step_obs(z, {1.0, 0.0}, 0)[0] == doctest::Approx(-0.8));
  CHECK(step_obs(z, {1.0, 0.0}, 1)[0] == doctest::Approx(0.8));
}

TEST_CASE("noise-free simple env is a linear map that composes") {
  const EnvParams p = quiet(0.6, 0.4);
  for (int a = 0; a < 2; ++a) {
    const double sg = 2.0 * a - 1.0;
    const double M[2][2] = {{0.8 * sg, 0.6}, {0.4, -0.8 * sg}};
    const std::vector<double> s{0.3, -1.1};
    const auto twice = step_obs(p, step_obs(p, s, a), a);
    double M2[2][2];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) M2[i][j] = M[i][0] * M[0][j] + M[i][1] * M[1][j];
    CHECK(twice[0] == doctest::Approx(M2[0][0] * s[0] + M2[0][1] * s[1]).epsilon(1e-14));
    CHECK(twice[1] == doctest::Approx(M2[1][0] * s[0] + M2[1][1] * s[1]).epsilon(1e-14));
  }
}

TEST_CASE("simple env reward noise stays in its band") {
  const EnvParams p = SimpleParams{0.0, -0.6};
  RngStream rng(9, Stream::Data);
  for (int k = 0; k < 2000; ++k) {
    const auto r = env_step(p, env_start_at(p, {0.0, 0.0}), 1, rng).reward;
    CHECK(r >= 0.35);
    CHECK(r <= 0.55);
  }
}

TEST_CASE("cartpole reset range and sign(theta) behavior from upright survives") {
  RngStream rng(5, Stream::Data);
  const EnvParams p = CartPoleParams{};
  for (int k = 0; k < 1000; ++k)
    for (double x : env_reset(p, rng).observation) {
      CHECK(x >= -0.05);
      CHECK(x <= 0.05);
    }
  BehaviorPolicy b = default_behavior(Family::CartPole);
  b.follow_prob = 1.0;
  EnvState s = env_start_at(p, {0.0, 0.0, 0.0, 0.0});
  while (!s.terminated) s = env_step(p, s, b.act(p, s.observation, rng), rng).state;
  CHECK(s.steps > 50);
  CHECK(s.steps <= 300);
}

TEST_CASE("cartpole and mountaincar termination rules") {
  RngStream rng(1, Stream::Data);
  const EnvParams cp = CartPoleParams{};
  auto out = env_step(cp, env_start_at(cp, {0.0, 0.0, 0.25, 0.0}), 1, rng);
  CHECK(out.state.terminated);
  CHECK_THROWS_AS(env_step(cp, out.state, 0, rng), std::logic_error);
  CHECK_THROWS_AS(env_step(cp, env_start_at(cp, {0, 0, 0, 0}), 2, rng), std::invalid_argument);

  const EnvParams mc = MountainCarParams{};
  CHECK(env_step(mc, env_start_at(mc, {-0.5, 0.0}), 1, rng).reward == -1.0);
  CHECK(env_step(mc, env_start_at(mc, {0.49, 0.0}), 1, rng).reward == -1.0);
  const auto goal = env_step(mc, env_start_at(mc, {0.55, 0.0}), 1, rng);
  CHECK(goal.reward == 1.0);
  CHECK(goal.state.terminated);
  const auto r0 = env_reset(mc, rng);
  CHECK(r0.observation[0] >= -0.6);
  CHECK(r0.observation[0] <= -0.4);
  CHECK(r0.observation[1] == 0.0);
}

TEST_CASE("mountaincar velocity-sign behavior") {
  const EnvParams mc = MountainCarParams{};
  BehaviorPolicy b = default_behavior(Family::MountainCar);
  RngStream rng(2, Stream::Data);
  int follow = 0;
  for (int k = 0; k < 10000; ++k) {
    const int a = b.act(mc, {-0.5, 0.01}, rng);
    CHECK((a == 2 || a == 1));
    follow += a == 2;
  }
  CHECK(std::abs(follow / 10000.0 - 0.8) < 0.015);
  b.follow_prob = 1.0;
  CHECK(b.act(mc, {-0.5, -0.01}, rng) == 0);
  CHECK(b.act(mc, {-0.5, 0.0}, rng) == 1);
}

TEST_CASE("validation of environment parameters") {
  CHECK_THROWS_AS(validate(CartPoleParams{-1.0, 10.0}), std::invalid_argument);
  CHECK_THROWS_AS(validate(CartPoleParams{0.5, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(validate(MountainCarParams{0.0}), std::invalid_argument);
  FiniteParams f{1, 1, {0.9}, {0.0}, {1.0}};
  CHECK_THROWS_AS(validate(f), std::invalid_argument);
  f.transition = {1.0};
  CHECK_NOTHROW(validate(f));
}

TEST_CASE("finite env with point-mass nu always starts at s0") {
  RngStream rng(4, Stream::Data);
  FiniteParams f = random_finite_mdp(4, 2, rng);
  f.initial = {0.0, 0.0, 1.0, 0.0};
  for (int k = 0; k < 100; ++k) CHECK(finite_index(env_reset(f, rng).observation) == 2);
}

TEST_CASE("exact visitation: trivial cases") {
  FiniteParams one{1, 1, {1.0}, {0.5}, {1.0}};
  TabularPolicy pi1{1, 1, {1.0}};
  CHECK(exact_visitation(one, pi1, 0.9)[0] == doctest::Approx(1.0).epsilon(1e-15));

  RngStream rng(8, Stream::Data);
  const FiniteParams f = random_finite_mdp(5, 2, rng);
  const TabularPolicy pi = random_policy(5, 2, rng);
  const auto d0 = exact_visitation(f, pi, 0.0);
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t a = 0; a < 2; ++a)
      CHECK(std::abs(d0[s * 2 + a] - f.initial[s] * pi(s, a)) < 1e-15);
}

TEST_CASE("exact visitation matches the truncated series") {
  RngStream rng(10, Stream::Data);
  for (int trial = 0; trial < 20; ++trial) {
    const FiniteParams f = random_finite_mdp(5, 2, rng);
    const TabularPolicy pi = random_policy(5, 2, rng);
    const double gamma = rng.uniform(0.0, 0.85);
    const auto d = exact_visitation(f, pi, gamma);
    const auto t = truncated_visitation(f, pi, gamma, 200);
    double sum = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      CHECK(std::abs(d[k] - t[k]) < 1e-10);
      CHECK(d[k] >= 0.0);
      sum += d[k];
    }
    CHECK(std::abs(sum - 1.0) < 1e-10);
  }
}

TEST_CASE("exact Q solves the Bellman equation") {
  RngStream rng(12, Stream::Data);
  const FiniteParams f = random_finite_mdp(6, 3, rng);
  const TabularPolicy pi = random_policy(6, 3, rng);
  const auto q = exact_q(f, pi, 0.9);
  const auto it = iterate_q(f, pi, 0.9, 600);
  for (std::size_t k = 0; k < q.size(); ++k) CHECK(std::abs(q[k] - it[k]) < 1e-10);
  // J(pi) = E_{d_pi} r(S, A).
  const auto d = exact_visitation(f, pi, 0.9);
  double jd = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) jd += d[k] * f.reward[k];
  CHECK(exact_value(f, pi, 0.9) == doctest::Approx(jd).epsilon(1e-12));
}

TEST_CASE("linear MDP closed-form weights") {
  // Scalar geometric-series oracle.
  const auto w = linear_mdp_q_weights({0.5}, {1.0}, 0.8);
  CHECK(w[0] == doctest::Approx(2.5).epsilon(1e-14));
  const auto w0 = linear_mdp_q_weights({0.3, -0.2}, {0.1, 0.2, 0.3, 0.4}, 0.0);
  CHECK(w0[0] == 0.3);
  CHECK(w0[1] == -0.2);
  CHECK_THROWS_AS(linear_mdp_q_weights({1.0}, {1.25}, 0.8), ConditioningError);
  CHECK_THROWS_AS(linear_mdp_q_weights({1.0}, {1.0, 0.0}, 0.8), std::invalid_argument);
}

TEST_CASE("linear MDP closed form matches Bellman iteration on the discretization") {
  RngStream rng(13, Stream::Data);
  for (int trial = 0; trial < 20; ++trial) {
    const LinearParams l = random_linear_mdp(6, 2, 3, rng);
    const TabularPolicy pi = random_policy(6, 2, rng);
    const double gamma = 0.8;
    const auto w = linear_mdp_q_weights(l.theta, policy_feature_integral(l, pi), gamma);
    const auto q = iterate_q(l.to_finite(), pi, gamma, 500);
    for (std::size_t s = 0; s < 6; ++s)
      for (std::size_t a = 0; a < 2; ++a) {
        double closed = 0.0;
        for (std::size_t k = 0; k < 3; ++k) closed += l.psi_at(s, a, k) * w[k];
        CHECK(std::abs(closed - q[s * 2 + a]) < 1e-6);
      }
  }
}

TEST_CASE("value iteration optimum dominates random policies") {
  RngStream rng(14, Stream::Data);
  const FiniteParams f = random_finite_mdp(5, 2, rng);
  const auto qstar = optimal_q(f, 0.8);
  TabularPolicy greedy{5, 2, std::vector<double>(10, 0.0)};
  for (std::size_t s = 0; s < 5; ++s) greedy.probs[s * 2 + (qstar[s * 2 + 1] > qstar[s * 2])] = 1;
  const double best = exact_value(f, greedy, 0.8);
  for (int k = 0; k < 50; ++k) CHECK(exact_value(f, random_policy(5, 2, rng), 0.8) <= best + 1e-12);
}
