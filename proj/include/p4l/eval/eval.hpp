#pragma once

// Monte-Carlo policy evaluation, the Bellman-error identity check on finite
// MDPs, and value/regret reports.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "p4l/core/rng.hpp"
#include "p4l/envs/envs.hpp"
#include "p4l/envs/finite.hpp"

namespace p4l::eval {

/// Action for trajectory `traj` at observation `s`. Policy randomness must
/// come from `rng` so evaluations are reproducible.
using PolicyFn = std::function<int(std::size_t traj, std::span<const double> s, RngStream& rng)>;

struct McOptions {
  std::size_t n_traj = 1000;
  /// Discounted-return horizon; 0 means default_horizon(gamma).
  std::size_t horizon = 0;
  /// Starting observations cycled by trajectory; empty draws from nu.
  std::vector<std::vector<double>> starts;
  /// Also run past the horizon until termination or the step limit and
  /// report the undiscounted step count (bounded-episode environments).
  bool count_steps = false;
};

struct McValue {
  double value = 0.0;
  double stderr_value = 0.0;
  double mean_steps = 0.0;
  double stderr_steps = 0.0;
  std::size_t n_traj = 0;
  std::size_t horizon = 0;
};

/// Mean over trajectories of (1 - gamma) sum_{t < horizon} gamma^t R_t.
/// Trajectory k draws its environment noise from rng.fork(2k) and its
/// actions from rng.fork(2k + 1), so two policies evaluated with the same
/// stream share their environment noise.
McValue mc_policy_value(const envs::EnvParams& env, const PolicyFn& policy, double gamma,
                        const McOptions& options, const RngStream& rng);

struct OpeCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double diff = 0.0;
};

/// lhs = J(pi) - plug-in value of q; rhs = E_{d_pi}[R + gamma q(S+, pi) - q(S, A)].
OpeCheck ope_identity_check(const envs::FiniteParams& env, const envs::TabularPolicy& policy,
                            const std::vector<double>& q, double gamma);

// ---------------------------------------------------------------- reports

struct GroupValue {
  std::string group;
  /// Share of the population in this group.
  double weight = 0.0;
  McValue mc;
};

struct EvalReport {
  std::string method;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::vector<GroupValue> groups;

  /// Weighted mean of the group values.
  double overall() const;
  /// Throws std::invalid_argument on negative errors or weights not summing to one.
  void validate() const;
};

struct Regret {
  std::string method;
  std::vector<double> per_group;
  double overall = 0.0;
};

/// regret(p) = value(reference) - value(p) per group and overall. Reports
/// must share the same group list; throws std::invalid_argument when the
/// reference is missing.
std::vector<Regret> regret_report(const std::map<std::string, EvalReport>& reports,
                                  const std::string& reference);

/// One row per (method, group, replication).
void write_values_header(std::ostream& os);
void write_values_rows(std::ostream& os, const EvalReport& report);

struct ValueRow {
  std::string method;
  std::string group;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  double weight = 0.0;
  double value = 0.0;
  double stderr_value = 0.0;
  double mean_steps = 0.0;
  double stderr_steps = 0.0;
  std::size_t n_traj = 0;
  std::size_t horizon = 0;
};

/// Parses a values CSV; throws ParseError on malformed input.
std::vector<ValueRow> read_values_csv(std::istream& is);

}  // namespace p4l::eval
