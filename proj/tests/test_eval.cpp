#include <cmath>
#include <sstream>

#include "doctest.h"
#include "p4l/core/error.hpp"
#include "p4l/eval/eval.hpp"

using namespace p4l;
using namespace p4l::eval;

namespace {

envs::FiniteParams constant_env(double r) {
  envs::FiniteParams e;
  e.n_states = 1;
  e.n_actions = 1;
  e.transition = {1.0};
  e.reward = {r};
  e.initial = {1.0};
  return e;
}

std::size_t state_of(std::span<const double> s) {
  std::size_t k = 0;
  while (s[k] < 0.5) ++k;
  return k;
}

PolicyFn tabular_fn(const envs::TabularPolicy& pi) {
  return [pi](std::size_t, std::span<const double> s, RngStream& rng) {
    const std::size_t st = state_of(s);
    double u = rng.uniform();
    for (std::size_t a = 0; a + 1 < pi.n_actions; ++a) {
      u -= pi(st, a);
      if (u < 0.0) return static_cast<int>(a);
    }
    return static_cast<int>(pi.n_actions - 1);
  };
}

EvalReport report(const std::string& method, std::vector<double> values) {
  EvalReport r;
  r.method = method;
  const double w = 1.0 / static_cast<double>(values.size());
  for (std::size_t g = 0; g < values.size(); ++g) {
    GroupValue gv;
    gv.group = "g" + std::to_string(g);
    gv.weight = w;
    gv.mc.value = values[g];
    gv.mc.n_traj = 10;
    gv.mc.horizon = 5;
    r.groups.push_back(gv);
  }
  return r;
}

}  // namespace

TEST_CASE("constant reward gives 1 - gamma^H") {
  const PolicyFn zero = [](std::size_t, std::span<const double>, RngStream&) { return 0; };
  McOptions opt;
  opt.n_traj = 7;
  opt.horizon = 10;
  const auto v = mc_policy_value(constant_env(1.0), zero, 0.8, opt, RngStream(1, Stream::Eval));
  CHECK(v.value == doctest::Approx(1.0 - std::pow(0.8, 10)).epsilon(1e-12));
  CHECK(v.stderr_value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v.n_traj == 7);
  CHECK(v.horizon == 10);
  opt.horizon = 0;
  const auto d = mc_policy_value(constant_env(1.0), zero, 0.8, opt, RngStream(1, Stream::Eval));
  CHECK(d.horizon == 42);
}

TEST_CASE("gamma = 0 returns the first reward") {
  RngStream rng(2, Stream::Init);
  const auto env = envs::random_finite_mdp(3, 2, rng);
  const PolicyFn one = [](std::size_t, std::span<const double>, RngStream&) { return 1; };
  McOptions opt;
  opt.n_traj = 200;
  opt.horizon = 5;
  opt.starts = {{0.0, 1.0, 0.0}};
  const auto v = mc_policy_value(env, one, 0.0, opt, RngStream(3, Stream::Eval));
  CHECK(v.value == doctest::Approx(env.r(1, 1)).epsilon(1e-12));
}

TEST_CASE("finite MC agrees with the exact value") {
  RngStream rng(4, Stream::Init);
  for (int trial = 0; trial < 3; ++trial) {
    const auto env = envs::random_finite_mdp(5, 2, rng);
    const auto pi = envs::random_policy(5, 2, rng);
    McOptions opt;
    opt.n_traj = 4000;
    opt.horizon = 100;
    const auto v = mc_policy_value(env, tabular_fn(pi), 0.8, opt, RngStream(5 + trial, Stream::Eval));
    CHECK(std::abs(v.value - envs::exact_value(env, pi, 0.8)) < 3.0 * v.stderr_value);
  }
}

TEST_CASE("standard error shrinks with more trajectories") {
  RngStream rng(6, Stream::Init);
  const auto env = envs::random_finite_mdp(4, 2, rng);
  const auto pi = envs::random_policy(4, 2, rng);
  McOptions small, large;
  small.n_traj = 100;
  large.n_traj = 1600;
  const auto a = mc_policy_value(env, tabular_fn(pi), 0.8, small, RngStream(7, Stream::Eval));
  const auto b = mc_policy_value(env, tabular_fn(pi), 0.8, large, RngStream(7, Stream::Eval));
  CHECK(b.stderr_value < a.stderr_value);
  CHECK(b.stderr_value == doctest::Approx(a.stderr_value / 4.0).epsilon(0.3));
}

TEST_CASE("common random numbers and determinism") {
  RngStream rng(8, Stream::Init);
  const auto env = envs::random_finite_mdp(4, 2, rng);
  const auto pi = envs::random_policy(4, 2, rng);
  McOptions opt;
  opt.n_traj = 50;
  const auto a = mc_policy_value(env, tabular_fn(pi), 0.8, opt, RngStream(9, Stream::Eval));
  const auto b = mc_policy_value(env, tabular_fn(pi), 0.8, opt, RngStream(9, Stream::Eval));
  CHECK(a.value == b.value);
  CHECK(a.stderr_value == b.stderr_value);
}

TEST_CASE("step counting runs to the step limit") {
  envs::CartPoleParams cp;
  const PolicyFn left = [](std::size_t, std::span<const double>, RngStream&) { return 0; };
  McOptions opt;
  opt.n_traj = 20;
  opt.horizon = 5;
  opt.count_steps = true;
  const auto v = mc_policy_value(cp, left, 0.99, opt, RngStream(10, Stream::Eval));
  CHECK(v.mean_steps > 5.0);
  CHECK(v.mean_steps < 50.0);
}

TEST_CASE("Bellman-error identity on finite MDPs") {
  RngStream rng(11, Stream::Init);
  for (int trial = 0; trial < 20; ++trial) {
    const auto env = envs::random_finite_mdp(6, 3, rng);
    const auto pi = envs::random_policy(6, 3, rng);
    std::vector<double> q(18);
    for (double& x : q) x = rng.uniform(-3.0, 3.0);
    const auto c = ope_identity_check(env, pi, q, 0.9);
    CHECK(std::abs(c.diff) < 1e-10);
    CHECK(c.lhs == doctest::Approx(c.rhs).epsilon(1e-9));
  }
  // At the true Q both sides vanish.
  const auto env = envs::random_finite_mdp(4, 2, rng);
  const auto pi = envs::random_policy(4, 2, rng);
  const auto c = ope_identity_check(env, pi, envs::exact_q(env, pi, 0.8), 0.8);
  CHECK(std::abs(c.lhs) < 1e-10);
  CHECK(std::abs(c.rhs) < 1e-10);
}

TEST_CASE("report overall and validation") {
  EvalReport r = report("P4L", {0.2, 0.4});
  CHECK(r.overall() == doctest::Approx(0.3));
  r.validate();
  r.groups[0].weight = 0.7;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
  r.groups[0].weight = 0.5;
  r.groups[0].mc.stderr_value = -1.0;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
}

TEST_CASE("regret examples") {
  std::map<std::string, EvalReport> m;
  m["oracle"] = report("oracle", {1.0, 0.5, 0.9});
  m["FQI"] = report("FQI", {0.7, 0.5, 0.6});
  const auto reg = regret_report(m, "oracle");
  REQUIRE(reg.size() == 2);
  const Regret& f = reg[0].method == "FQI" ? reg[0] : reg[1];
  CHECK(f.per_group[0] == doctest::Approx(0.3));
  CHECK(f.per_group[1] == doctest::Approx(0.0));
  CHECK(f.per_group[2] == doctest::Approx(0.3));
  CHECK(f.overall == doctest::Approx(0.2));
  const Regret& o = reg[0].method == "oracle" ? reg[0] : reg[1];
  CHECK(o.overall == 0.0);
  CHECK_THROWS_AS(regret_report(m, "missing"), std::invalid_argument);
  m["bad"] = report("bad", {0.1});
  CHECK_THROWS_AS(regret_report(m, "oracle"), std::invalid_argument);
}

TEST_CASE("values CSV round trip") {
  EvalReport a = report("P4L-K3", {0.25, 0.5});
  a.replication = 4;
  a.seed = 99;
  a.groups[1].mc.stderr_value = 0.125;
  std::stringstream ss;
  write_values_header(ss);
  write_values_rows(ss, a);
  const auto rows = read_values_csv(ss);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].method == "P4L-K3");
  CHECK(rows[1].group == "g1");
  CHECK(rows[1].replication == 4);
  CHECK(rows[1].seed == 99);
  CHECK(rows[1].value == 0.5);
  CHECK(rows[1].stderr_value == 0.125);
  CHECK(rows[0].weight == 0.5);
  CHECK(rows[0].n_traj == 10);
  CHECK(rows[0].horizon == 5);

  std::stringstream bad("method,group\nx,y\n");
  CHECK_THROWS_AS(read_values_csv(bad), ParseError);
}
