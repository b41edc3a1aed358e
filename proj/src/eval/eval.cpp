#include "p4l/eval/eval.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "p4l/core/config.hpp"
#include "p4l/core/error.hpp"
#include "p4l/core/text.hpp"

namespace p4l::eval {

namespace {

struct Moments {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    sq += x * x;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stderr_mean() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sq - static_cast<double>(n) * m * m) /
                                         static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};

}  // namespace

McValue mc_policy_value(const envs::EnvParams& env, const PolicyFn& policy, double gamma,
                        const McOptions& opt, const RngStream& rng) {
  if (opt.n_traj == 0) throw std::invalid_argument("mc_policy_value: n_traj must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("mc_policy_value: gamma must be in [0, 1)");
  const std::size_t horizon = opt.horizon > 0 ? opt.horizon : default_horizon(gamma);
  const std::size_t limit = envs::max_steps(env);
  const std::size_t run_to = opt.count_steps && limit > 0 ? std::max(horizon, limit) : horizon;
  Moments values, steps;
  for (std::size_t k = 0; k < opt.n_traj; ++k) {
    RngStream env_rng = rng.fork(2 * k);
    RngStream act_rng = rng.fork(2 * k + 1);
    envs::EnvState st = opt.starts.empty()
                            ? envs::env_reset(env, env_rng)
                            : envs::env_start_at(env, opt.starts[k % opt.starts.size()]);
    double ret = 0.0, disc = 1.0;
    std::size_t t = 0;
    for (; t < run_to && !st.terminated; ++t) {
      const int a = policy(k, st.observation, act_rng);
      envs::StepResult r = envs::env_step(env, st, a, env_rng);
      if (t < horizon) ret += disc * r.reward;
      disc *= gamma;
      st = std::move(r.state);
    }
    values.add((1.0 - gamma) * ret);
    steps.add(static_cast<double>(t));
  }
  McValue out;
  out.value = values.mean();
  out.stderr_value = values.stderr_mean();
  out.mean_steps = steps.mean();
  out.stderr_steps = steps.stderr_mean();
  out.n_traj = opt.n_traj;
  out.horizon = horizon;
  return out;
}

OpeCheck ope_identity_check(const envs::FiniteParams& env, const envs::TabularPolicy& policy,
                            const std::vector<double>& q, double gamma) {
  envs::validate(envs::EnvParams{env});
  const std::size_t S = env.n_states, A = env.n_actions;
  if (q.size() != S * A) throw std::invalid_argument("ope_identity_check: q must be S x A");
  const auto d = envs::exact_visitation(env, policy, gamma);
  std::vector<double> v(S, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) v[s] += policy(s, a) * q[s * A + a];
  double rhs = 0.0;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      double next = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) next += env.p(s, a, s2) * v[s2];
      rhs += d[s * A + a] * (env.r(s, a) + gamma * next - q[s * A + a]);
    }
  OpeCheck out;
  out.lhs = envs::exact_value(env, policy, gamma) - envs::plugin_value(env, policy, q, gamma);
  out.rhs = rhs;
  out.diff = std::abs(out.lhs - out.rhs);
  return out;
}

double EvalReport::overall() const {
  double acc = 0.0;
  for (const GroupValue& g : groups) acc += g.weight * g.mc.value;
  return acc;
}

void EvalReport::validate() const {
  double w = 0.0;
  for (const GroupValue& g : groups) {
    if (g.mc.stderr_value < 0.0 || g.mc.stderr_steps < 0.0)
      throw std::invalid_argument("EvalReport: negative standard error");
    if (g.weight < 0.0) throw std::invalid_argument("EvalReport: negative group weight");
    w += g.weight;
  }
  if (!groups.empty() && std::abs(w - 1.0) > 1e-9)
    throw std::invalid_argument("EvalReport: group weights do not sum to one");
}

std::vector<Regret> regret_report(const std::map<std::string, EvalReport>& reports,
                                  const std::string& reference) {
  const auto ref = reports.find(reference);
  if (ref == reports.end())
    throw std::invalid_argument("regret_report: missing reference '" + reference + "'");
  const auto& rg = ref->second.groups;
  std::vector<Regret> out;
  for (const auto& [name, rep] : reports) {
    if (rep.groups.size() != rg.size())
      throw std::invalid_argument("regret_report: group lists differ for '" + name + "'");
    Regret r;
    r.method = name;
    for (std::size_t g = 0; g < rg.size(); ++g) {
      if (rep.groups[g].group != rg[g].group)
        throw std::invalid_argument("regret_report: group lists differ for '" + name + "'");
      r.per_group.push_back(rg[g].mc.value - rep.groups[g].mc.value);
      r.overall += rg[g].weight * r.per_group.back();
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_values_header(std::ostream& os) {
  os << "method,group,replication,seed,weight,value,stderr,mean_steps,stderr_steps,n_traj,"
        "horizon\n";
}

void write_values_rows(std::ostream& os, const EvalReport& report) {
  std::string buf;
  for (const GroupValue& g : report.groups) {
    buf += report.method + ',' + g.group + ',' + std::to_string(report.replication) + ',' +
           std::to_string(report.seed);
    for (double x : {g.weight, g.mc.value, g.mc.stderr_value, g.mc.mean_steps, g.mc.stderr_steps}) {
      buf += ',';
      text::append_real(buf, x);
    }
    buf += ',' + std::to_string(g.mc.n_traj) + ',' + std::to_string(g.mc.horizon) + '\n';
  }
  os << buf;
}

std::vector<ValueRow> read_values_csv(std::istream& is) {
  std::string l;
  std::size_t line = 1;
  if (!std::getline(is, l)) throw ParseError("empty values file", line);
  if (text::split(text::trim(l)).size() != 11) throw ParseError("unexpected values header", line);
  std::vector<ValueRow> rows;
  while (std::getline(is, l)) {
    ++line;
    if (text::trim(l).empty()) continue;
    const auto f = text::split(text::trim(l));
    if (f.size() != 11) throw ParseError("expected 11 fields", line);
    ValueRow r;
    r.method = std::string(f[0]);
    r.group = std::string(f[1]);
    if (r.method.empty() || r.group.empty()) throw ParseError("empty method or group", line);
    r.replication = text::parse_int<std::size_t>(f[2], line);
    r.seed = text::parse_int<std::uint64_t>(f[3], line);
    r.weight = text::parse_real(f[4], line);
    r.value = text::parse_real(f[5], line);
    r.stderr_value = text::parse_real(f[6], line);
    r.mean_steps = text::parse_real(f[7], line);
    r.stderr_steps = text::parse_real(f[8], line);
    r.n_traj = text::parse_int<std::size_t>(f[9], line);
    r.horizon = text::parse_int<std::size_t>(f[10], line);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace p4l::eval
