#include <cmath>
#include <sstream>

#include "doctest.h"
#include "p4l/models/loss.hpp"
#include "p4l/models/network.hpp"

using namespace p4l;
using namespace p4l::models;

namespace {

RbfBasis grid_basis(std::size_t J) {
  RbfBasis b;
  b.n_centers = J;
  b.state_dim = 2;
  b.bandwidth = 1.0;
  for (std::size_t j = 0; j < J; ++j) {
    b.centers.push_back(std::cos(static_cast<double>(j)));
    b.centers.push_back(std::sin(static_cast<double>(j)) * 1.5);
  }
  return b;
}

NetworkSpec spec_for(Tier tier) {
  NetworkSpec s;
  s.tier = tier;
  s.n_features = 4;
  s.latent_dim = 2;
  s.hidden = tier == Tier::Residual ? 8 : 0;
  s.n_actions = 2;
  s.q_bound = 5.0;
  s.f_bound = 2.0;
  return s;
}

struct Problem {
  ModelBundle bundle;
  TransitionBatch batch;
  InitialBatch initial;
  LatentTable latents;
};

Problem random_problem(Tier tier, std::uint64_t seed, double param_scale = 1.0) {
  RngStream rng(seed, Stream::Init);
  Problem p;
  p.bundle = make_bundle(spec_for(tier), grid_basis(4), rng);
  for (auto* v : {&p.bundle.q_params, &p.bundle.f_params, &p.bundle.pi_params})
    for (double& x : *v) x *= param_scale;
  p.latents = LatentTable(3, 2);
  for (double& x : p.latents.data) x = rng.normal();
  p.batch.n_features = 4;
  p.initial.n_features = 4;
  for (std::size_t k = 0; k < 6; ++k) {
    const std::vector<double> s{rng.normal(), rng.normal()};
    const std::vector<double> s2{rng.normal(), rng.normal()};
    p.batch.push(featurize(p.bundle.basis, s), static_cast<int>(rng.below(2)), rng.uniform(),
                 featurize(p.bundle.basis, s2), k % 3);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const std::vector<double> s{rng.normal(), rng.normal()};
    p.initial.push(featurize(p.bundle.basis, s), k % 3);
  }
  p.initial.scale = 0.2 * 3.0 / 4.0;
  return p;
}

}  // namespace

TEST_CASE("squash is odd, bounded and identity near zero") {
  for (double z : {-10.0, -1.2, -0.3, 0.0, 0.4, 0.99, 1.0, 1.01, 3.0, 50.0}) {
    CHECK(squash(-z, 2.0) == -squash(z, 2.0));
    CHECK(std::abs(squash(z, 2.0)) <= 2.0);
    if (std::abs(z) < 10.0) CHECK(std::abs(squash(z, 2.0)) < 2.0);
  }
  CHECK(squash(0.7, 2.0) == 0.7);
  CHECK(squash(1.0, 2.0) == 1.0);
  const double h = 1e-6;
  for (double z : {-3.0, -0.5, 0.2, 1.5, 4.0}) {
    const double fd = (squash(z + h, 2.0) - squash(z - h, 2.0)) / (2 * h);
    CHECK(squash_derivative(z, 2.0) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("zero parameters give zero q and f and a uniform policy") {
  ModelBundle b = zero_bundle(spec_for(Tier::Linear), grid_basis(4));
  const std::vector<double> s{0.3, -0.2}, u{1.0, -2.0};
  CHECK(q_value(b, s, 0, u) == 0.0);
  CHECK(f_value(b, s, 1, u) == 0.0);
  const auto p = policy_probs(b, s, u);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
}

TEST_CASE("linear tier with unit weight on feature j reproduces phi_j") {
  ModelBundle b = zero_bundle(spec_for(Tier::Linear), grid_basis(4));
  b.q_params[linear_index(b.spec, 1, 2, 0)] = 1.0;
  const std::vector<double> s{0.1, 0.4}, u{0.0, 0.0};
  const auto phi = featurize(b.basis, s);
  CHECK(q_value(b, s, 1, u) == doctest::Approx(phi[2]).epsilon(1e-15));
  CHECK(q_value(b, s, 0, u) == 0.0);
}

TEST_CASE("outputs respect the declared bounds for random parameters") {
  for (Tier tier : {Tier::Linear, Tier::Residual}) {
    RngStream rng(7, Stream::Init);
    NetworkSpec spec = spec_for(tier);
    for (int trial = 0; trial < 1000; ++trial) {
      ModelBundle b = make_bundle(spec, grid_basis(4), rng);
      for (auto* v : {&b.q_params, &b.f_params})
        for (double& x : *v) x *= 30.0;
      const std::vector<double> s{rng.normal(0, 2), rng.normal(0, 2)};
      const std::vector<double> u{rng.normal(0, 3), rng.normal(0, 3)};
      const int a = static_cast<int>(rng.below(2));
      CHECK(std::abs(q_value(b, s, a, u)) <= spec.q_bound);
      CHECK(std::abs(f_value(b, s, a, u)) <= spec.f_bound);
    }
  }
}

TEST_CASE("negating the output layer negates f exactly") {
  for (Tier tier : {Tier::Linear, Tier::Residual}) {
    RngStream rng(11, Stream::Init);
    ModelBundle b = make_bundle(spec_for(tier), grid_basis(4), rng);
    for (double& x : b.f_params) x *= 4.0;
    ModelBundle neg = b;
    for (std::size_t k : output_layer_indices(b.spec)) neg.f_params[k] = -neg.f_params[k];
    for (int trial = 0; trial < 50; ++trial) {
      const std::vector<double> s{rng.normal(), rng.normal()}, u{rng.normal(), rng.normal()};
      for (int a = 0; a < 2; ++a) CHECK(f_value(neg, s, a, u) == -f_value(b, s, a, u));
    }
  }
}

TEST_CASE("softmax normalization, positivity and shift invariance") {
  std::vector<double> probs(2);
  softmax(std::vector<double>{1.0, 0.0}, probs);
  CHECK(probs[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-15));
  CHECK(probs[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(probs[1] == doctest::Approx(0.2689).epsilon(1e-4));
  RngStream rng(3, Stream::Init);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits{rng.normal(0, 5), rng.normal(0, 5), rng.normal(0, 5)};
    std::vector<double> p(3), q(3);
    softmax(logits, p);
    const double c = rng.normal(0, 10);
    for (double& l : logits) l += c;
    softmax(logits, q);
    double sum = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(p[a] > 0.0);
      CHECK(std::abs(p[a] - q[a]) < 1e-12);
      sum += p[a];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("identical latent rows give identical outputs") {
  Problem p = random_problem(Tier::Residual, 5);
  const std::vector<double> s{0.2, 0.1};
  const auto u = p.latents.row(0);
  std::vector<double> u_copy(u.begin(), u.end());
  CHECK(q_value(p.bundle, s, 0, u) == q_value(p.bundle, s, 0, u_copy));
  CHECK(policy_probs(p.bundle, s, u) == policy_probs(p.bundle, s, u_copy));
}

TEST_CASE("constant loss has zero gradients and non-scalar loss is rejected") {
  Problem p = random_problem(Tier::Linear, 1);
  LossSpec c{LossKind::Constant};
  c.constant = 3.0;
  const Gradients g = backprop_grads(p.bundle, c, p.batch, p.initial, p.latents);
  CHECK(g.loss == 3.0);
  for (const auto* v : {&g.q, &g.f, &g.pi, &g.u})
    for (double x : *v) CHECK(x == 0.0);
  CHECK_THROWS_AS(backprop_grads(p.bundle, LossSpec{LossKind::PolicyVector}, p.batch, p.initial,
                                 p.latents),
                  std::invalid_argument);
}

TEST_CASE("reverse-mode gradients match central differences") {
  const LossKind kinds[] = {LossKind::QValue,    LossKind::FValue,    LossKind::PolicyProb,
                            LossKind::PhiHat,    LossKind::ValueTerm, LossKind::Lagrangian};
  const CheckTarget targets[] = {CheckTarget::QParams, CheckTarget::FParams,
                                 CheckTarget::PiParams, CheckTarget::Latents};
  for (Tier tier : {Tier::Linear, Tier::Residual}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      Problem p = random_problem(tier, seed, 2.0);
      RngStream rng(seed, Stream::Minibatch);
      for (LossKind kind : kinds) {
        LossSpec spec{kind, 0.8, 1.7, 0.05};
        for (CheckTarget target : targets) {
          const auto rep = finite_diff_check(p.bundle, spec, p.batch, p.initial, p.latents,
                                             target, tier == Tier::Linear ? 1e-7 : 1e-5, rng, 10);
          CAPTURE(static_cast<int>(tier));
          CAPTURE(static_cast<int>(kind));
          CAPTURE(static_cast<int>(target));
          CAPTURE(rep.max_rel_error);
          CHECK(rep.pass);
        }
      }
    }
  }
}

TEST_CASE("a corrupted gradient fails the finite-difference check") {
  Problem p = random_problem(Tier::Linear, 2);
  RngStream rng(1, Stream::Minibatch);
  LossSpec spec{LossKind::PhiHat, 0.8};
  const auto rep = finite_diff_check(p.bundle, spec, p.batch, p.initial, p.latents,
                                     CheckTarget::QParams, 1e-5, rng, 10, true);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  for (Tier tier : {Tier::Linear, Tier::Residual}) {
    Problem p = random_problem(tier, 9);
    std::stringstream ss;
    write_bundle(ss, p.bundle);
    std::size_t line = 0;
    const ModelBundle back = read_bundle(ss, line);
    CHECK(back == p.bundle);
  }
}

TEST_CASE("shape errors are reported") {
  ModelBundle b = zero_bundle(spec_for(Tier::Linear), grid_basis(4));
  const std::vector<double> s{0.0, 0.0};
  CHECK_THROWS_AS(q_value(b, s, 0, std::vector<double>{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(q_value(b, s, 2, std::vector<double>{1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(policy_probs(b, std::vector<double>{1.0}, std::vector<double>{1.0, 0.0}),
                  std::invalid_argument);
}
