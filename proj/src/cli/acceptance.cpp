#include "p4l/cli/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "p4l/baselines/baselines.hpp"
#include "p4l/cli/experiment.hpp"
#include "p4l/core/cluster.hpp"
#include "p4l/core/collect.hpp"
#include "p4l/envs/finite.hpp"
#include "p4l/eval/eval.hpp"
#include "p4l/models/loss.hpp"
#include "p4l/solver/groups.hpp"
#include "p4l/solver/oracles.hpp"
#include "p4l/solver/solver.hpp"

namespace p4l::cli {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Runs replications 0..R-1 of `config` on up to `workers` threads.
std::vector<ReplicationResult> run_replications(const ExperimentConfig& config,
                                                std::size_t workers) {
  std::vector<std::optional<ReplicationResult>> out(config.replications);
  std::mutex mu;
  std::optional<std::string> error;
  std::size_t next = 0;
  auto work = [&] {
    for (;;) {
      std::size_t r;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= config.replications || error) return;
        r = next++;
      }
      try {
        out[r] = run_replication(config, r);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(workers, config.replications); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) throw Error(*error);
  std::vector<ReplicationResult> res;
  for (auto& r : out) res.push_back(std::move(*r));
  return res;
}

const eval::EvalReport& report_of(const ReplicationResult& r, const std::string& method) {
  for (const auto& rep : r.reports)
    if (rep.method == method) return rep;
  throw Error("missing method " + method);
}

// ------------------------------------------------------------------ AC1

CriterionResult ac1() {
  CriterionResult r{"AC1", "Bellman-error identity on 100 random finite MDPs", false, {}, 0.0};
  RngStream rng(101, Stream::Init);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto env = envs::random_finite_mdp(5, 2, rng);
    const auto pi = envs::random_policy(5, 2, rng);
    std::vector<double> q(10);
    for (double& x : q) x = rng.uniform(-5.0, 5.0);
    const auto c = eval::ope_identity_check(env, pi, q, rng.uniform(0.5, 0.99));
    worst = std::max(worst, std::abs(c.lhs - c.rhs));
  }
  r.pass = worst < 1e-8;
  r.detail = "max |lhs - rhs| = " + fmt("%.3g", worst);
  return r;
}

// ------------------------------------------------------------------ AC2

CriterionResult ac2() {
  CriterionResult r{"AC2", "linear-MDP closed form vs 500-step Bellman evaluation", false, {}, 0.0};
  RngStream rng(202, Stream::Init);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t S = 6, A = 2, D = 3;
    const auto lin = envs::random_linear_mdp(S, A, D, rng);
    const auto pi = envs::random_policy(S, A, rng);
    const double gamma = 0.9;
    const auto w =
        envs::linear_mdp_q_weights(lin.theta, envs::policy_feature_integral(lin, pi), gamma);
    const auto fin = lin.to_finite();
    std::vector<double> q(S * A, 0.0), next(S * A);
    for (int it = 0; it < 500; ++it) {
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
          double v = fin.r(s, a);
          for (std::size_t s2 = 0; s2 < S; ++s2) {
            double qs2 = 0.0;
            for (std::size_t a2 = 0; a2 < A; ++a2) qs2 += pi(s2, a2) * q[s2 * A + a2];
            v += gamma * fin.p(s, a, s2) * qs2;
          }
          next[s * A + a] = v;
        }
      q.swap(next);
    }
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        double closed = 0.0;
        for (std::size_t d = 0; d < D; ++d) closed += lin.psi_at(s, a, d) * w[d];
        worst = std::max(worst, std::abs(closed - q[s * A + a]));
      }
  }
  r.pass = worst < 1e-6;
  r.detail = "max |closed - iterated| = " + fmt("%.3g", worst) + " over 20 instances";
  return r;
}

// ------------------------------------------------------------------ AC3

struct GradProblem {
  models::ModelBundle bundle;
  models::TransitionBatch batch;
  models::InitialBatch initial;
  models::LatentTable latents;
};

GradProblem grad_problem(models::Tier tier, std::uint64_t seed) {
  RngStream rng(seed, Stream::Init);
  RbfBasis basis;
  basis.n_centers = 4;
  basis.state_dim = 2;
  basis.bandwidth = 1.0;
  for (int j = 0; j < 4; ++j) {
    basis.centers.push_back(rng.normal());
    basis.centers.push_back(rng.normal());
  }
  models::NetworkSpec spec;
  spec.tier = tier;
  spec.n_features = 4;
  spec.latent_dim = 2;
  spec.hidden = tier == models::Tier::Residual ? 8 : 0;
  spec.n_actions = 2;
  spec.q_bound = 5.0;
  spec.f_bound = 2.0;
  GradProblem p;
  p.bundle = models::make_bundle(spec, basis, rng);
  for (auto* v : {&p.bundle.q_params, &p.bundle.f_params, &p.bundle.pi_params})
    for (double& x : *v) x *= 2.0;
  p.latents = models::LatentTable(3, 2);
  for (double& x : p.latents.data) x = rng.normal();
  p.batch.n_features = 4;
  p.initial.n_features = 4;
  for (std::size_t k = 0; k < 6; ++k) {
    const std::vector<double> s{rng.normal(), rng.normal()}, s2{rng.normal(), rng.normal()};
    p.batch.push(featurize(basis, s), static_cast<int>(rng.below(2)), rng.uniform(),
                 featurize(basis, s2), k % 3);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const std::vector<double> s{rng.normal(), rng.normal()};
    p.initial.push(featurize(basis, s), k % 3);
  }
  p.initial.scale = 0.15;
  return p;
}

CriterionResult ac3() {
  CriterionResult r{"AC3", "reverse-mode gradients vs central differences", false, {}, 0.0};
  const models::CheckTarget targets[] = {models::CheckTarget::QParams, models::CheckTarget::FParams,
                                         models::CheckTarget::PiParams, models::CheckTarget::Latents};
  const models::LossKind kinds[] = {models::LossKind::PhiHat, models::LossKind::ValueTerm,
                                    models::LossKind::Lagrangian};
  double worst = 0.0;
  std::size_t points = 0, failures = 0, resampled = 0;
  for (models::Tier tier : {models::Tier::Linear, models::Tier::Residual}) {
    for (std::uint64_t seed = 1; seed <= 500; ++seed) {
      const GradProblem p = grad_problem(tier, seed);
      RngStream rng(seed, Stream::Minibatch);
      ++points;
      for (models::LossKind kind : kinds) {
        const models::LossSpec spec{kind, 0.8, 1.3, 0.05};
        for (models::CheckTarget t : targets) {
          // f does not enter the value term.
          if (kind == models::LossKind::ValueTerm && t == models::CheckTarget::FParams) continue;
          const auto rep = models::finite_diff_check(p.bundle, spec, p.batch, p.initial, p.latents,
                                                     t, 1e-5, rng, 3);
          worst = std::max(worst, rep.max_rel_error);
          resampled += rep.n_resampled;
          if (!rep.pass) ++failures;
        }
      }
      // Penalty gradient in u against the same central-difference rule.
      std::vector<double> v(4);
      for (double& x : v) x = rng.normal();
      const auto g = solver::penalty_grad(p.latents, v, 2, 0.7);
      for (std::size_t k = 0; k < p.latents.data.size(); ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(p.latents.data[k]));
        auto a = p.latents, b = p.latents;
        a.data[k] += h;
        b.data[k] -= h;
        const double fd = (solver::penalty(a, v, 2, 0.7) - solver::penalty(b, v, 2, 0.7)) / (2 * h);
        const double rel = std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-4});
        worst = std::max(worst, rel);
        if (rel >= 1e-5) ++failures;
      }
    }
  }
  r.pass = failures == 0;
  r.detail = std::to_string(points) + " points, both tiers; max relative error " +
             fmt("%.3g", worst) + ", failures " + std::to_string(failures) + ", kink resamples " +
             std::to_string(resampled);
  return r;
}

// ------------------------------------------------------------------ AC4

/// Minimizer of mu (w - v)^2 + (rho/2)(z - w)^2 by bisection on the derivative.
double bisect_min(double z, double v, double rho, double mu) {
  double lo = std::min(z, v) - 1.0, hi = std::max(z, v) + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double d = 2.0 * mu * (mid - v) - rho * (z - mid);
    (d > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

CriterionResult ac4(const ExperimentConfig& smoke) {
  CriterionResult r{"AC4", "penalty, prox and multiplier algebra", false, {}, 0.0};
  RngStream rng(404, Stream::Init);
  bool penalty_ok = true;
  double prox_worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 5, d = 2, K = 3;
    models::LatentTable u(n, d);
    for (double& x : u.data) x = rng.normal();
    std::vector<double> v(K * d);
    for (double& x : v) x = rng.normal();
    const double mu = rng.uniform(0.01, 5.0), rho = rng.uniform(0.1, 5.0);
    if (solver::penalty(u, v, K, mu) < 0.0) penalty_ok = false;
    models::LatentTable matched(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t m = 0; m < d; ++m) matched.data[i * d + m] = v[(i % K) * d + m];
    if (solver::penalty(matched, v, K, mu) != 0.0) penalty_ok = false;
    matched.data[0] += 1e-3;
    if (!(solver::penalty(matched, v, K, mu) > 0.0)) penalty_ok = false;

    // Block objective per row: min_k min_w mu |w - v_k|^2 + (rho/2)|z - w|^2.
    for (std::size_t i = 0; i < n; ++i) {
      const auto z = u.row(i);
      double best = 1e300;
      std::vector<double> best_w(d);
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> w(d);
        double obj = 0.0;
        for (std::size_t m = 0; m < d; ++m) {
          w[m] = bisect_min(z[m], v[k * d + m], rho, mu);
          obj += mu * (w[m] - v[k * d + m]) * (w[m] - v[k * d + m]) +
                 0.5 * rho * (z[m] - w[m]) * (z[m] - w[m]);
        }
        if (obj < best) best = obj, best_w = w;
      }
      const std::size_t k = nearest_centroid(z.data(), v, K, d);
      std::vector<double> w(d);
      solver::prox_w(z, {v.data() + k * d, d}, rho, mu, w);
      for (std::size_t m = 0; m < d; ++m) prox_worst = std::max(prox_worst, std::abs(w[m] - best_w[m]));
    }
  }
  double min_lambda = 1e300;
  std::size_t updates = 0;
  for (LambdaUpdate rule : {LambdaUpdate::Paper, LambdaUpdate::Ascent}) {
    ExperimentConfig c = smoke;
    c.lambda_update = rule;
    const auto ds = collect_dataset(c.groups, {resolve_behavior(c)}, c.T, RngStream(c.seed, Stream::Data));
    const auto res = solver::run_p4l(ds, c, c.seed);
    for (const auto& h : res.state.history) min_lambda = std::min(min_lambda, h.lambda), ++updates;
  }
  r.pass = penalty_ok && prox_worst < 1e-8 && min_lambda >= 0.0;
  r.detail = std::string("penalty nonnegative and zero iff matched: ") + (penalty_ok ? "yes" : "no") +
             "; prox vs numerical minimizer max |dw| = " + fmt("%.3g", prox_worst) +
             "; min lambda over " + std::to_string(updates) + " updates = " + fmt("%.4g", min_lambda);
  return r;
}

// ------------------------------------------------------------------ AC5

CriterionResult ac5() {
  CriterionResult r{"AC5", "weak duality on the 2-parameter Q grid", false, {}, 0.0};
  RngStream rng(505, Stream::Init);
  const double gamma = 0.8;
  const auto env = envs::random_finite_mdp(3, 2, rng);
  envs::BehaviorPolicy beh;
  beh.kind = envs::BehaviorKind::Tabular;
  beh.table.assign(6, 0.5);
  const auto ds = collect_dataset({{"g", env, 4}}, {beh}, 50, RngStream(505, Stream::Data));
  const auto basis = solver::one_hot_basis(3);
  const auto data = solver::prepare_training_data(ds, basis);
  const std::size_t n = data.transitions.size();
  auto state_of = [](std::span<const double> phi) {
    return static_cast<std::size_t>(std::max_element(phi.begin(), phi.end()) - phi.begin());
  };

  std::vector<double> grid;
  for (int k = 0; k <= 24; ++k) grid.push_back(-3.0 + 0.25 * k);
  std::size_t violations = 0, tested = 0, empty = 0;
  double worst_margin = 1e300, consistency = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto pi = envs::random_policy(3, 2, rng);
    for (int ui = 0; ui < 3; ++ui) {
      models::LatentTable lat(ds.n_individuals(), 2);
      for (double& x : lat.data) x = rng.normal();
      struct Point {
        double value, max_phi;
        models::ModelBundle bundle;
      };
      std::vector<Point> pts;
      for (double t0 : grid)
        for (double t1 : grid) {
          const std::vector<double> q{t0, t1, t0, t1, t0, t1};
          // Tabular maximizer of Phi_hat over f in [-1, 1]: sign of the
          // cell sums of the Bellman residual.
          std::vector<double> cell(6, 0.0);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t s = state_of(data.transitions.phi_row(b));
            const std::size_t s2 = state_of(data.transitions.next_row(b));
            const auto a = static_cast<std::size_t>(data.transitions.action[b]);
            double next = 0.0;
            for (std::size_t a2 = 0; a2 < 2; ++a2) next += pi(s2, a2) * q[s2 * 2 + a2];
            cell[s * 2 + a] += data.transitions.reward[b] + gamma * next - q[s * 2 + a];
          }
          std::vector<double> f(6);
          double max_phi = 0.0;
          for (std::size_t k = 0; k < 6; ++k) {
            f[k] = cell[k] >= 0.0 ? 1.0 : -1.0;
            max_phi += std::abs(cell[k]) / static_cast<double>(n);
          }
          Point p{0.0, max_phi, solver::embed_tabular(env, q, f, pi, 2)};
          p.value = solver::value_term(p.bundle, lat, data, gamma);
          consistency = std::max(
              consistency, std::abs(solver::phi_hat(p.bundle, lat, data.transitions, gamma) - max_phi));
          pts.push_back(std::move(p));
        }
      std::vector<double> phis;
      for (const auto& p : pts) phis.push_back(p.max_phi);
      std::sort(phis.begin(), phis.end());
      const double alpha = phis[phis.size() / 4];
      double primal = 1e300;
      for (const auto& p : pts)
        if (p.max_phi <= alpha) primal = std::min(primal, p.value);
      if (primal == 1e300) {
        ++empty;
        continue;
      }
      double dual = -1e300;
      for (int li = 0; li <= 40; ++li) {
        const double lambda = 0.5 * li;
        double inner = 1e300;
        for (const auto& p : pts)
          inner = std::min(inner, solver::lagrangian(p.bundle, lat, lambda, alpha, data, gamma));
        dual = std::max(dual, inner);
      }
      ++tested;
      worst_margin = std::min(worst_margin, primal - dual);
      if (dual > primal + 1e-12) ++violations;
    }
  }
  r.pass = violations == 0 && empty == 0 && consistency < 1e-10;
  r.detail = std::to_string(tested) + " (pi, u) pairs, violations " + std::to_string(violations) +
             ", min primal - dual " + fmt("%.4g", worst_margin) + ", |Phi_hat(embedded f) - oracle| " +
             fmt("%.2g", consistency);
  return r;
}

// ------------------------------------------------------------------ AC6 / AC8

struct SimpleRuns {
  ExperimentConfig config;
  std::vector<ReplicationResult> reps;
};

SimpleRuns simple_runs(const AcceptanceOptions& o) {
  SimpleRuns s;
  s.config = load_config(o.config_dir / "simple.json");
  ExperimentConfig& c = s.config;
  c.groups = simple_groups(10);
  c.T = 100;
  c.gamma = 0.8;
  c.replications = 10;
  c.n_eval_traj = 1000;
  c.k_values = {2, 3};
  c.run_auto = false;
  c.run_fqi = true;
  c.run_cluster_fqi = true;
  c.k_max = 5;
  s.reps = run_replications(c, o.workers);
  return s;
}

CriterionResult ac6(const SimpleRuns& s) {
  CriterionResult r{"AC6", "SimpleEnv: P4L(K=3) beats FQI per group and P4L(K=2) overall", false, {}, 0.0};
  const std::size_t G = s.config.groups.size();
  std::vector<std::size_t> wins(G, 0);
  std::size_t k3_over_k2 = 0;
  std::vector<double> m3(G, 0.0), mf(G, 0.0);
  for (const auto& rep : s.reps) {
    const auto& k3 = report_of(rep, "P4L-K3");
    const auto& k2 = report_of(rep, "P4L-K2");
    const auto& fqi = report_of(rep, "FQI");
    for (std::size_t g = 0; g < G; ++g) {
      if (k3.groups[g].mc.value > fqi.groups[g].mc.value) ++wins[g];
      m3[g] += k3.groups[g].mc.value / static_cast<double>(s.reps.size());
      mf[g] += fqi.groups[g].mc.value / static_cast<double>(s.reps.size());
    }
    if (k3.overall() >= k2.overall()) ++k3_over_k2;
  }
  r.pass = k3_over_k2 >= 8;
  r.detail = "wins over FQI per group:";
  for (std::size_t g = 0; g < G; ++g) {
    r.pass = r.pass && wins[g] >= 8;
    r.detail += " " + s.config.groups[g].label + "=" + std::to_string(wins[g]) + "/10 (" +
                fmt("%.3f", m3[g]) + " vs " + fmt("%.3f", mf[g]) + ")";
  }
  r.detail += "; K=3 >= K=2 overall " + std::to_string(k3_over_k2) + "/10";
  return r;
}

CriterionResult ac8(const SimpleRuns& s) {
  CriterionResult r{"AC8", "group recovery and automatic K", false, {}, 0.0};
  std::vector<double> acc;
  std::size_t k3 = 0;
  for (const auto& rep : s.reps) {
    for (const auto& run : rep.runs)
      if (run.method == "P4L-K3") acc.push_back(run.group_accuracy);
    if (rep.auto_k == 3) ++k3;
  }
  const double med = median(acc);
  r.pass = med >= 0.8 && k3 >= 7;
  r.detail = "median best-permutation accuracy " + fmt("%.3f", med) + "; select_num_groups K=3 in " +
             std::to_string(k3) + "/10 seeds";
  return r;
}

// ------------------------------------------------------------------ AC7

CriterionResult ac7(const AcceptanceOptions& o) {
  CriterionResult r{"AC7", "CartPole Setting (A): P4L(K=3) steps >= 1.5x FQI", false, {}, 0.0};
  ExperimentConfig c = load_config(o.config_dir / "cartpole.json");
  c.groups = cartpole_setting_a(100);
  c.replications = 5;
  c.k_values = {3};
  c.run_auto = false;
  c.run_fqi = true;
  c.run_cluster_fqi = false;
  const auto reps = run_replications(c, o.workers);
  std::size_t ok = 0;
  r.detail = "mean steps P4L(K=3) vs FQI:";
  for (std::size_t g = 0; g < c.groups.size(); ++g) {
    double p = 0.0, f = 0.0;
    for (const auto& rep : reps) {
      p += report_of(rep, "P4L-K3").groups[g].mc.mean_steps / static_cast<double>(reps.size());
      f += report_of(rep, "FQI").groups[g].mc.mean_steps / static_cast<double>(reps.size());
    }
    if (p >= 1.5 * f) ++ok;
    r.detail += " " + c.groups[g].label + " " + fmt("%.1f", p) + " vs " + fmt("%.1f", f);
  }
  r.pass = ok >= 2;
  r.detail += "; settings with margin " + std::to_string(ok) + "/3";
  return r;
}

// ------------------------------------------------------------------ AC9

CriterionResult ac9() {
  CriterionResult r{"AC9", "max_f Phi_hat at the true Q shrinks with N*T", false, {}, 0.0};
  const double gamma = 0.8;
  const std::size_t sizes[] = {1000, 10000, 100000};
  std::vector<double> medians;
  for (std::size_t nt : sizes) {
    std::vector<double> vals;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      RngStream rng(900 + seed, Stream::Init);
      const auto env = envs::random_finite_mdp(4, 2, rng);
      const auto pi = envs::random_policy(4, 2, rng);
      const auto q = envs::exact_q(env, pi, gamma);
      const auto bundle = solver::embed_tabular(env, q, std::vector<double>(8, 0.0), pi, 2);
      envs::BehaviorPolicy beh;
      beh.kind = envs::BehaviorKind::Tabular;
      beh.table.assign(8, 0.5);
      const std::size_t N = 10;
      const auto ds = collect_dataset({{"g", env, N}}, {beh}, nt / N, RngStream(seed, Stream::Data));
      const auto data = solver::prepare_training_data(ds, bundle.basis);
      models::LatentTable lat(N, 2);
      solver::InnerOptions opt;
      opt.budget = 200;
      opt.lr = 2.0;
      opt.minibatch = 0;
      opt.tol = 0.0;
      RngStream mb(seed, Stream::Minibatch);
      vals.push_back(solver::max_phi_hat(bundle, lat, data, gamma, opt, mb).value);
    }
    medians.push_back(median(vals));
  }
  r.pass = medians[0] > medians[1] && medians[1] > medians[2];
  r.detail = "median max_f Phi_hat at N*T = 1e3, 1e4, 1e5: " + fmt("%.4g", medians[0]) + ", " +
             fmt("%.4g", medians[1]) + ", " + fmt("%.4g", medians[2]);
  return r;
}

// ------------------------------------------------------------------ AC10

CriterionResult ac10(const AcceptanceOptions& o) {
  CriterionResult r{"AC10", "determinism and bit-exact round trips", false, {}, 0.0};
  ExperimentConfig c = load_config(o.config_dir / "smoke.json");
  const auto a = o.work_dir / "ac10_a", b = o.work_dir / "ac10_b";
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
  run_experiment(c, a, o.workers);
  run_experiment(c, b, 1);
  const bool same_values = read_file(a / "values.csv") == read_file(b / "values.csv");

  const auto ds = collect_dataset(c.groups, {resolve_behavior(c)}, c.T, RngStream(c.seed, Stream::Data));
  save_dataset(ds, o.work_dir / "ac10_data.txt");
  const auto ds2 = load_dataset(o.work_dir / "ac10_data.txt");
  save_dataset(ds2, o.work_dir / "ac10_data2.txt");
  const bool data_ok = ds2 == ds && read_file(o.work_dir / "ac10_data.txt") ==
                                        read_file(o.work_dir / "ac10_data2.txt");

  const auto res = solver::run_p4l(ds, c, c.seed);
  std::stringstream s1;
  solver::write_result(s1, res);
  const auto back = solver::read_result(s1);
  std::stringstream s2, s3;
  solver::write_result(s2, back);
  solver::write_result(s3, res);
  const bool ckpt_ok = back.bundle == res.bundle && back.latents == res.latents && s2.str() == s3.str();

  RngStream frng(c.seed, Stream::Features);
  const auto basis = fit_rbf_basis(ds.pooled_states(), ds.state_dim(), c.n_features, frng);
  const auto fqi = baselines::run_cluster_fqi(ds, basis, 2, c.gamma, {c.fqi_iters, c.ridge});
  std::stringstream b1;
  baselines::write_baseline(b1, fqi);
  const bool base_ok = baselines::read_baseline(b1) == fqi;
  const bool config_ok = to_json(config_from_json(to_json(c))) == to_json(c);

  r.pass = same_values && data_ok && ckpt_ok && base_ok && config_ok;
  auto yn = [](bool x) { return x ? "ok" : "FAIL"; };
  r.detail = std::string("values.csv rerun ") + yn(same_values) + ", dataset " + yn(data_ok) +
             ", checkpoint " + yn(ckpt_ok) + ", baseline " + yn(base_ok) + ", config " + yn(config_ok);
  return r;
}

}  // namespace

std::set<std::string> fast_criteria() { return {"AC1", "AC2", "AC3", "AC4", "AC5", "AC9", "AC10"}; }

std::string format_result(const CriterionResult& r) {
  return r.id + (r.pass ? " PASS " : " FAIL ") + r.title + " (" + fmt("%.1f", r.seconds) + "s): " +
         r.detail;
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& o,
                                            const std::function<void(const CriterionResult&)>& cb) {
  std::filesystem::create_directories(o.work_dir);
  auto want = [&](const std::string& id) { return o.only.empty() || o.only.count(id) > 0; };
  std::vector<CriterionResult> out;
  std::optional<SimpleRuns> simple;
  std::optional<ExperimentConfig> smoke;
  auto get_smoke = [&]() -> const ExperimentConfig& {
    if (!smoke) smoke = load_config(o.config_dir / "smoke.json");
    return *smoke;
  };
  auto run = [&](const std::string& id, const std::string& title, const std::function<CriterionResult()>& f,
                 double budget_s, double extra_s = 0.0) {
    if (!want(id)) return;
    const auto t0 = Clock::now();
    CriterionResult r;
    try {
      r = f();
    } catch (const std::exception& e) {
      r = CriterionResult{id, title, false, std::string("error: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count() + extra_s;
    if (budget_s > 0.0 && r.seconds > budget_s) {
      r.pass = false;
      r.detail += "; over the " + fmt("%.0f", budget_s) + " s budget";
    }
    if (cb) cb(r);
    out.push_back(std::move(r));
  };
  run("AC1", "Bellman-error identity", ac1, 10.0);
  run("AC2", "linear-MDP oracle", ac2, 5.0);
  run("AC3", "gradient exactness", ac3, 60.0);
  run("AC4", "ADMM/penalty algebra", [&] { return ac4(get_smoke()); }, 0.0);
  run("AC5", "weak duality", ac5, 0.0);
  const double simple_budget = 30.0 * 60.0;
  if (want("AC6") || want("AC8")) {
    const auto t0 = Clock::now();
    std::string error;
    try {
      simple = simple_runs(o);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double shared = std::chrono::duration<double>(Clock::now() - t0).count();
    auto with_shared = [&](CriterionResult (*f)(const SimpleRuns&), const std::string& id) {
      return [&, f, id] {
        if (!simple) return CriterionResult{id, "", false, "error: " + error};
        return f(*simple);
      };
    };
    run("AC6", "SimpleEnv headline trend", with_shared(ac6, "AC6"), simple_budget, shared);
    run("AC8", "group recovery", with_shared(ac8, "AC8"), 0.0, shared);
  }
  run("AC7", "CartPole trend", [&] { return ac7(o); }, 60.0 * 60.0);
  run("AC9", "feasibility trend", ac9, 0.0);
  run("AC10", "determinism and serialization", [&] { return ac10(o); }, 0.0);
  std::sort(out.begin(), out.end(), [](const CriterionResult& a, const CriterionResult& b) {
    return std::stoi(a.id.substr(2)) < std::stoi(b.id.substr(2));
  });
  return out;
}

}  // namespace p4l::cli
