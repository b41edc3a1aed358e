#include <cmath>
#include <sstream>

#include "doctest.h"
#include "p4l/core/cluster.hpp"
#include "p4l/core/collect.hpp"
#include "p4l/core/error.hpp"
#include "p4l/solver/groups.hpp"
#include "p4l/solver/oracles.hpp"
#include "p4l/solver/solver.hpp"

using namespace p4l;
using namespace p4l::solver;

namespace {

ExperimentConfig small_config(std::size_t n_per_group = 2, std::size_t T = 20) {
  ExperimentConfig c;
  c.groups = simple_groups(n_per_group);
  c.T = T;
  c.n_features = 6;
  c.K = 3;
  c.outer_iters = 3;
  c.f_steps = 5;
  c.q_steps = 5;
  c.pi_steps = 5;
  c.u_steps = 2;
  c.minibatch = 32;
  c.value_pairs_per_step = 16;
  return c;
}

struct Fixture {
  ExperimentConfig config;
  OfflineDataset ds;
  RbfBasis basis;
  TrainingData data;
  ModelBundle bundle;
  LatentTable lat;
};

Fixture make_fixture(std::uint64_t seed = 3) {
  Fixture fx;
  fx.config = small_config();
  fx.ds = collect_dataset(fx.config.groups, {resolve_behavior(fx.config)}, fx.config.T,
                          RngStream(seed, Stream::Data));
  RngStream frng(seed, Stream::Features);
  fx.basis = fit_rbf_basis(fx.ds.pooled_states(), 2, fx.config.n_features, frng);
  std::vector<double> extra{0.1, -0.2, 0.4, 0.3};
  fx.data = prepare_training_data(fx.ds, fx.basis, extra);
  RngStream irng(seed, Stream::Init);
  fx.bundle = models::make_bundle(network_spec(fx.config, fx.basis.size(), 2, 1.0), fx.basis, irng);
  fx.lat = LatentTable(fx.ds.n_individuals(), 2);
  for (double& x : fx.lat.data) x = irng.normal();
  return fx;
}

void set_constant(ModelBundle& b, std::vector<double>& params, double value) {
  std::fill(params.begin(), params.end(), 0.0);
  for (std::size_t a = 0; a < b.spec.n_actions; ++a)
    params[models::linear_index(b.spec, a, b.spec.n_features, 0)] = value;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = k;
  return v;
}

}  // namespace

TEST_CASE("training data layout") {
  const Fixture fx = make_fixture();
  CHECK(fx.data.n_individuals == 6);
  CHECK(fx.data.transitions.size() == 6 * 20);
  CHECK(fx.data.n_initial == 6 + 2);
  CHECK(fx.data.n_pairs() == 6 * 8);
  const auto all = fx.data.all_pairs(0.8);
  CHECK(all.size() == 48);
  CHECK(all.scale == doctest::Approx(0.2 / 8.0));
  const std::vector<std::size_t> idx{9};
  const auto p = fx.data.pairs(idx, 1.0);
  CHECK(p.individual[0] == 1);
  for (std::size_t j = 0; j < fx.basis.size(); ++j) CHECK(p.phi[j] == fx.data.initial_row(1)[j]);
  CHECK_THROWS_AS(prepare_training_data(fx.ds, fx.basis, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("phi_hat examples") {
  Fixture fx = make_fixture();
  const auto& tb = fx.data.transitions;
  std::fill(fx.bundle.f_params.begin(), fx.bundle.f_params.end(), 0.0);
  CHECK(phi_hat(fx.bundle, fx.lat, tb, 0.8) == 0.0);

  std::fill(fx.bundle.q_params.begin(), fx.bundle.q_params.end(), 0.0);
  set_constant(fx.bundle, fx.bundle.f_params, 1.0);
  double mean_r = 0.0;
  for (double r : tb.reward) mean_r += r;
  mean_r /= static_cast<double>(tb.size());
  CHECK(phi_hat(fx.bundle, fx.lat, tb, 0.8) == doctest::Approx(mean_r).epsilon(1e-12));

  Fixture g = make_fixture(5);
  const double v = phi_hat(g.bundle, g.lat, g.data.transitions, 0.8);
  for (std::size_t k : models::output_layer_indices(g.bundle.spec))
    g.bundle.f_params[k] = -g.bundle.f_params[k];
  CHECK(phi_hat(g.bundle, g.lat, g.data.transitions, 0.8) == -v);
}

TEST_CASE("penalty examples") {
  LatentTable u(2, 2);
  u.data = {1.0, 0.0, 0.0, 0.0};
  const std::vector<double> v{0.0, 0.0, 2.0, 2.0};
  CHECK(penalty(u, v, 2, 1.0) == doctest::Approx(1.0));
  CHECK(penalty(u, v, 2, 2.0) == doctest::Approx(2.0));
  LatentTable matched(2, 2);
  matched.data = {2.0, 2.0, 0.0, 0.0};
  CHECK(penalty(matched, v, 2, 3.0) == 0.0);
  CHECK_THROWS_AS(penalty(u, v, 0, 1.0), std::invalid_argument);
  RngStream rng(1, Stream::Init);
  for (int t = 0; t < 50; ++t) {
    LatentTable r(4, 2);
    for (double& x : r.data) x = rng.normal();
    std::vector<double> c{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    CHECK(penalty(r, c, 2, 0.5) >= 0.0);
  }
}

TEST_CASE("penalty gradient matches central differences") {
  RngStream rng(2, Stream::Init);
  LatentTable u(3, 2);
  for (double& x : u.data) x = rng.normal();
  const std::vector<double> v{0.5, 0.5, -1.0, 0.3};
  const auto g = penalty_grad(u, v, 2, 0.7);
  for (std::size_t k = 0; k < u.data.size(); ++k) {
    LatentTable a = u, b = u;
    a.data[k] += 1e-6;
    b.data[k] -= 1e-6;
    const double fd = (penalty(a, v, 2, 0.7) - penalty(b, v, 2, 0.7)) / 2e-6;
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("lagrangian") {
  const Fixture fx = make_fixture();
  CHECK_THROWS_AS(lagrangian(fx.bundle, fx.lat, -0.1, 0.05, fx.data, 0.8), std::invalid_argument);
  const double v = value_term(fx.bundle, fx.lat, fx.data, 0.8);
  CHECK(lagrangian(fx.bundle, fx.lat, 0.0, 0.05, fx.data, 0.8) == doctest::Approx(v));
  const double ph = phi_hat(fx.bundle, fx.lat, fx.data.transitions, 0.8);
  CHECK(lagrangian(fx.bundle, fx.lat, 2.0, 0.05, fx.data, 0.8) ==
        doctest::Approx(v + 2.0 * (ph - 0.05)));
}

TEST_CASE("sgd updates: zero rate, isolation and direction") {
  const Fixture fx = make_fixture();
  const auto rows = fx.data.rows(all_rows(fx.data.transitions.size()));
  const auto pairs = fx.data.all_pairs(0.8);
  const double lambda = 1.5, alpha = 0.05;

  ModelBundle b = fx.bundle;
  sgd_update_f(b, fx.lat, rows, 0.8, 0.0);
  sgd_update_q(b, fx.lat, lambda, alpha, rows, pairs, 0.8, 0.0);
  sgd_update_pi(b, fx.lat, lambda, alpha, rows, pairs, 0.8, 0.0);
  CHECK(b == fx.bundle);

  auto L = [&](const ModelBundle& m) {
    return lagrangian(m, fx.lat, lambda, alpha, fx.data, 0.8);
  };
  ModelBundle bf = fx.bundle;
  sgd_update_f(bf, fx.lat, rows, 0.8, 1e-3);
  CHECK(bf.q_params == fx.bundle.q_params);
  CHECK(bf.pi_params == fx.bundle.pi_params);
  CHECK(phi_hat(bf, fx.lat, rows, 0.8) > phi_hat(fx.bundle, fx.lat, rows, 0.8));

  ModelBundle bq = fx.bundle;
  sgd_update_q(bq, fx.lat, lambda, alpha, rows, pairs, 0.8, 1e-3);
  CHECK(bq.f_params == fx.bundle.f_params);
  CHECK(bq.pi_params == fx.bundle.pi_params);
  CHECK(L(bq) < L(fx.bundle));

  ModelBundle bp = fx.bundle;
  const auto gu = sgd_update_pi(bp, fx.lat, lambda, alpha, rows, pairs, 0.8, 1e-3);
  CHECK(bp.f_params == fx.bundle.f_params);
  CHECK(bp.q_params == fx.bundle.q_params);
  CHECK(L(bp) > L(fx.bundle));
  CHECK(gu.size() == fx.lat.data.size());
}

TEST_CASE("sgd updates reject non-finite gradients") {
  Fixture fx = make_fixture();
  const auto rows = fx.data.rows(all_rows(10));
  fx.bundle.f_params[0] = std::nan("");
  CHECK_THROWS_AS(sgd_update_f(fx.bundle, fx.lat, rows, 0.8, 0.1), DivergenceError);
}

TEST_CASE("frozen cache gradients equal backprop") {
  const Fixture fx = make_fixture();
  const std::vector<std::size_t> rows{0, 3, 7, 19, 40, 41, 77, 100};
  const std::vector<std::size_t> pairs{0, 5, 9, 30, 47};
  const auto tb = fx.data.rows(rows);
  const auto ib = fx.data.pairs(pairs, 0.37);
  const double lambda = 2.5;
  const auto ref = models::backprop_grads(
      fx.bundle, models::LossSpec{models::LossKind::Lagrangian, 0.8, lambda, 0.0}, tb, ib, fx.lat);
  const auto ref_f = models::backprop_grads(
      fx.bundle, models::LossSpec{models::LossKind::PhiHat, 0.8}, tb, {}, fx.lat,
      models::GradRequest{false, true, false, false});

  FrozenCache cache(fx.data);
  std::vector<double> g;
  for (int pass = 0; pass < 2; ++pass) {  // second pass is served from the memo
    const double of = cache.f_grad(fx.bundle, fx.lat, 0.8, rows, g);
    CHECK(of == doctest::Approx(ref_f.loss).epsilon(1e-12));
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == doctest::Approx(ref_f.f[k]).epsilon(1e-10));
  }
  cache.reset();
  for (int pass = 0; pass < 2; ++pass) {
    const double oq = cache.q_grad(fx.bundle, fx.lat, 0.8, lambda, rows, pairs, 0.37, g);
    CHECK(oq == doctest::Approx(ref.loss).epsilon(1e-12));
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == doctest::Approx(ref.q[k]).epsilon(1e-10));
  }
  cache.reset();
  for (int pass = 0; pass < 2; ++pass) {
    const double op = cache.pi_grad(fx.bundle, fx.lat, 0.8, lambda, rows, pairs, 0.37, g);
    CHECK(op == doctest::Approx(ref.loss).epsilon(1e-12));
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == doctest::Approx(ref.pi[k]).epsilon(1e-10));
  }
}

TEST_CASE("max_phi_hat: ascent, symmetric restart and budget") {
  const Fixture fx = make_fixture();
  InnerOptions opt;
  opt.budget = 30;
  opt.minibatch = 0;
  RngStream r1(1, Stream::Minibatch), r2(1, Stream::Minibatch);
  const double start = phi_hat(fx.bundle, fx.lat, fx.data.transitions, 0.8);
  const auto one = max_phi_hat(fx.bundle, fx.lat, fx.data, 0.8, opt, r1, false);
  CHECK(one.value >= start);
  CHECK_FALSE(one.flipped);
  const auto both = max_phi_hat(fx.bundle, fx.lat, fx.data, 0.8, opt, r2, true);
  CHECK(both.value >= one.value);

  opt.budget = 0;
  CHECK_THROWS_AS(max_phi_hat(fx.bundle, fx.lat, fx.data, 0.8, opt, r1), std::invalid_argument);
}

TEST_CASE("max_phi_hat is near zero at the true Q of a finite MDP") {
  RngStream rng(11, Stream::Init);
  const auto env = envs::random_finite_mdp(4, 2, rng);
  const auto pi = envs::random_policy(4, 2, rng);
  const double gamma = 0.8;
  const auto q = envs::exact_q(env, pi, gamma);
  ModelBundle b = embed_tabular(env, q, std::vector<double>(8, 0.0), pi, 2);

  envs::BehaviorPolicy beh;
  beh.kind = envs::BehaviorKind::Tabular;
  beh.table = std::vector<double>(8, 0.5);
  const std::vector<GroupSpec> groups{{"g", env, 50}};
  const auto ds = collect_dataset(groups, {beh}, 200, RngStream(4, Stream::Data));
  const auto data = prepare_training_data(ds, b.basis);
  LatentTable lat(ds.n_individuals(), 2, 0.0);
  InnerOptions opt;
  opt.budget = 300;
  opt.tol = 0.0;
  RngStream mb(4, Stream::Minibatch);
  const auto truth = max_phi_hat(b, lat, data, gamma, opt, mb);

  // A Q shifted by a constant violates the Bellman equation by (1-gamma) c.
  std::vector<double> shifted = q;
  for (double& x : shifted) x += 1.0;
  const ModelBundle bs = embed_tabular(env, shifted, std::vector<double>(8, 0.0), pi, 2);
  RngStream mb2(4, Stream::Minibatch);
  const auto off = max_phi_hat(bs, lat, data, gamma, opt, mb2);
  CHECK(truth.value < 0.05);
  CHECK(off.value > 0.15);
}

TEST_CASE("embed_tabular reproduces the tables") {
  RngStream rng(12, Stream::Init);
  const auto env = envs::random_finite_mdp(5, 2, rng);
  const auto pi = envs::random_policy(5, 2, rng);
  const auto q = envs::exact_q(env, pi, 0.9);
  std::vector<double> f(10);
  for (double& x : f) x = rng.uniform(-1.0, 1.0);
  const auto b = embed_tabular(env, q, f, pi, 3);
  const std::vector<double> u{0.3, -1.0, 2.0};
  for (std::size_t s = 0; s < 5; ++s) {
    std::vector<double> e(5, 0.0);
    e[s] = 1.0;
    const auto p = models::policy_probs(b, e, u);
    for (int a = 0; a < 2; ++a) {
      CHECK(models::q_value(b, e, a, u) == doctest::Approx(q[s * 2 + a]).epsilon(1e-9));
      CHECK(models::f_value(b, e, a, u) == doctest::Approx(f[s * 2 + a]).epsilon(1e-9));
      CHECK(p[a] == doctest::Approx(pi(s, a)).epsilon(1e-9));
    }
  }
}

TEST_CASE("kmeans examples") {
  RngStream rng(7, Stream::Clustering);
  const std::vector<double> pts{0.0, 0.0, 1.0, 0.0, 10.0, 10.0, 11.0, 10.0};
  const auto km = kmeans(pts, 4, 2, 2, rng);
  std::vector<double> c = km.centroids;
  if (c[0] > c[2]) std::swap_ranges(c.begin(), c.begin() + 2, c.begin() + 2);
  CHECK(c[0] == doctest::Approx(0.5));
  CHECK(c[1] == doctest::Approx(0.0));
  CHECK(c[2] == doctest::Approx(10.5));
  CHECK(c[3] == doctest::Approx(10.0));
  CHECK(km.assignment[0] == km.assignment[1]);
  CHECK(km.assignment[2] == km.assignment[3]);
  CHECK(km.assignment[0] != km.assignment[2]);

  const auto all = kmeans(pts, 4, 2, 4, rng);
  CHECK(all.inertia == 0.0);

  std::vector<double> cloud(200);
  for (double& x : cloud) x = rng.normal();
  const auto r = kmeans(cloud, 100, 2, 5, rng);
  for (std::size_t k = 1; k < r.inertia_history.size(); ++k)
    CHECK(r.inertia_history[k] <= r.inertia_history[k - 1] + 1e-12);
  CHECK_THROWS_AS(kmeans(pts, 4, 2, 5, rng), std::invalid_argument);
}

TEST_CASE("prox and (v, w) block") {
  const std::vector<double> z{1.0, -2.0}, v{3.0, 0.0};
  std::vector<double> w(2);
  prox_w(z, v, 1.0, 0.0, w);
  CHECK(w == z);
  prox_w(z, v, 2.0, 1.0, w);
  CHECK(w[0] == doctest::Approx((2.0 * 1.0 + 2.0 * 3.0) / 4.0));
  CHECK(w[1] == doctest::Approx((2.0 * -2.0) / 4.0));
  prox_w(z, v, 1e9, 1.0, w);
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-8));

  RngStream rng(8, Stream::Clustering);
  for (int t = 0; t < 20; ++t) {
    LatentTable u(6, 2);
    for (double& x : u.data) x = rng.normal();
    LatentBlocks b = make_latent_blocks(u, 2, rng);
    for (double& x : b.eta.data) x = 0.3 * rng.normal();
    for (double& x : b.w.data) x = rng.normal();
    const double before = vw_block_objective(b, 1.0, 0.8);
    update_vw(b, 1.0, 0.8, rng);
    CHECK(vw_block_objective(b, 1.0, 0.8) <= before + 1e-12);
  }
}

TEST_CASE("admm step with mu = 0 zeroes the multipliers") {
  const Fixture fx = make_fixture();
  RngStream rng(9, Stream::Clustering);
  LatentBlocks b = make_latent_blocks(fx.lat, 3, rng);
  for (double& x : b.eta.data) x = 0.5 * rng.normal();
  AdmmOptions opt;
  opt.mu = 0.0;
  opt.rho = 2.0;
  opt.u_steps = 2;
  admm_step(b, fx.bundle, 1.0, 0.05, fx.data, 0.8, opt, rng);
  // w = u + eta_old / rho, so eta_old + rho (u - w) = 0.
  for (double x : b.eta.data) CHECK(std::abs(x) < 1e-12);
  opt.rho = 0.0;
  CHECK_THROWS_AS(admm_step(b, fx.bundle, 1.0, 0.05, fx.data, 0.8, opt, rng),
                  std::invalid_argument);
}

TEST_CASE("update_lambda") {
  CHECK(update_lambda(1.3, 0.0, 0.5, LambdaUpdate::Paper) == 1.3);
  CHECK(update_lambda(1.0, 10.0, 0.5, LambdaUpdate::Paper) == 0.0);
  CHECK(update_lambda(1.0, 0.4, 0.5, LambdaUpdate::Paper) == doctest::Approx(0.8));
  CHECK(update_lambda(1.0, 0.4, 0.5, LambdaUpdate::Ascent) == doctest::Approx(1.2));
  CHECK(update_lambda(0.1, -10.0, 0.5, LambdaUpdate::Ascent) == 0.0);
}

TEST_CASE("run_p4l: determinism, lambda and checkpoint round trip") {
  Fixture fx = make_fixture();
  fx.config.lambda_update = LambdaUpdate::Ascent;
  const auto a = run_p4l(fx.ds, fx.config, 21);
  const auto b = run_p4l(fx.ds, fx.config, 21);
  CHECK(a.bundle == b.bundle);
  CHECK(a.latents == b.latents);
  REQUIRE(a.state.history.size() == 3);
  for (const auto& h : a.state.history) CHECK(h.lambda >= 0.0);
  CHECK(a.assignment.size() == 6);

  std::stringstream ss;
  write_result(ss, a);
  const auto back = read_result(ss);
  CHECK(back.bundle == a.bundle);
  CHECK(back.latents == a.latents);
  CHECK(back.state.lambda == a.state.lambda);
  std::stringstream again;
  write_result(again, back);
  std::stringstream first;
  write_result(first, a);
  CHECK(again.str() == first.str());

  std::stringstream bad("spec linear 6 2 0 2 1 2\nrbf nope\n");
  CHECK_THROWS_AS(read_result(bad), ParseError);

  std::stringstream csv;
  write_history_csv(csv, a.state.history);
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("iteration,value,", 0) == 0);
}

TEST_CASE("run_p4l: K = 1 with large mu collapses the latents") {
  Fixture fx = make_fixture();
  fx.config.K = 1;
  fx.config.mu = 1e4;
  fx.config.outer_iters = 150;
  fx.config.rho = 4.0;
  fx.config.u_steps = 5;
  fx.config.outer_tol = 0.0;
  fx.config.admm_tol = 0.0;
  const auto r = run_p4l(fx.ds, fx.config, 4);
  const auto& u = r.latents.u;
  for (std::size_t i = 0; i < u.n; ++i)
    for (std::size_t m = 0; m < u.dim; ++m)
      CHECK(std::abs(u.data[i * u.dim + m] - r.latents.v[m]) < 1e-2);
}

TEST_CASE("run_p4l validates inputs") {
  Fixture fx = make_fixture();
  fx.config.K = 7;
  CHECK_THROWS_AS(run_p4l(fx.ds, fx.config, 1), SchemaError);
}

TEST_CASE("select_num_groups") {
  // Identical deterministic individuals have zero distance.
  envs::FiniteParams env;
  env.n_states = 2;
  env.n_actions = 1;
  env.transition = {0.0, 1.0, 1.0, 0.0};
  env.reward = {1.0, 0.5};
  env.initial = {1.0, 0.0};
  envs::BehaviorPolicy beh;
  beh.kind = envs::BehaviorKind::Tabular;
  beh.table = {1.0, 1.0};
  const auto same = collect_dataset({{"g", env, 5}}, {beh}, 10, RngStream(1, Stream::Data));
  CHECK(select_num_groups(same, 5).K == 1);

  // Two groups with disjoint dynamics.
  envs::FiniteParams stay = env;
  stay.transition = {1.0, 0.0, 0.0, 1.0};
  const envs::FiniteParams& flip = env;
  const auto two = collect_dataset({{"stay", stay, 6}, {"flip", flip, 6}}, {beh}, 20,
                                   RngStream(2, Stream::Data));
  const auto sel = select_num_groups(two, 5);
  CHECK(sel.K == 2);
  CHECK(best_permutation_accuracy(sel.labels, two.groups()) == 1.0);

  CHECK(select_num_groups(std::vector<double>(16, 0.0), 4, 3).K == 1);
  CHECK_THROWS_AS(select_num_groups(two, 0), std::invalid_argument);
}

TEST_CASE("embed_individuals") {
  // Points on a line: MDS recovers the spacing up to sign and scale.
  const std::vector<double> x{0.0, 1.0, 3.0};
  std::vector<double> d(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d[i * 3 + j] = std::abs(x[i] - x[j]);
  const auto e = embed_individuals(d, 3, 2, 1.0);
  double sq = 0.0;
  for (double v : e.data) sq += v * v;
  CHECK(std::sqrt(sq / 3.0) == doctest::Approx(1.0));
  const double r = (e.data[2 * 2] - e.data[1 * 2]) / (e.data[1 * 2] - e.data[0]);
  CHECK(r == doctest::Approx(2.0));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(e.data[i * 2 + 1]) < 1e-9);
}
