#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "p4l/core/rng.hpp"

namespace p4l {

/// One (S_t, A_t, R_t, S_{t+1}) tuple of individual `individual`.
struct Transition {
  std::size_t individual = 0;
  std::size_t t = 0;
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;

  bool operator==(const Transition&) const = default;
};

/// Balanced offline panel: every individual contributes exactly `horizon`
/// consecutive transitions and next_state at t equals state at t + 1.
/// Transitions are stored individual-major, so row index = i * horizon + t.
/// Immutable after construction.
class OfflineDataset {
 public:
  OfflineDataset() = default;

  /// Validates the balanced-panel and continuity invariants; throws
  /// SchemaError on violation. `groups` is optional ground-truth group
  /// metadata (empty or one entry per individual, -1 for unknown).
  OfflineDataset(std::size_t n_individuals, std::size_t horizon,
                 std::size_t state_dim, std::size_t n_actions,
                 std::vector<Transition> transitions,
                 std::vector<int> groups = {});

  std::size_t n_individuals() const noexcept { return n_individuals_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  std::size_t n_actions() const noexcept { return n_actions_; }
  std::size_t size() const noexcept { return transitions_.size(); }
  bool empty() const noexcept { return transitions_.empty(); }

  const Transition& operator[](std::size_t row) const { return transitions_[row]; }
  const Transition& at(std::size_t individual, std::size_t t) const;
  std::span<const Transition> individual(std::size_t i) const;
  std::span<const Transition> transitions() const noexcept { return transitions_; }

  /// Ground-truth group per individual; empty when unknown.
  const std::vector<int>& groups() const noexcept { return groups_; }
  bool has_groups() const noexcept { return !groups_.empty(); }

  /// Pooled matrix (row-major, n x d_s) of every S_t together with the final
  /// next state of each individual, i.e. { S_t : 0 <= t <= T }.
  std::vector<double> pooled_states() const;
  /// Initial states S_0^i, row-major N x d_s.
  std::vector<double> initial_states() const;

  bool operator==(const OfflineDataset&) const = default;

 private:
  std::size_t n_individuals_ = 0;
  std::size_t horizon_ = 0;
  std::size_t state_dim_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<Transition> transitions_;
  std::vector<int> groups_;
};

/// Uniform sample of `n0` row indices without replacement (partial
/// Fisher-Yates). Throws std::invalid_argument unless 1 <= n0 <= n_rows.
std::vector<std::size_t> sample_minibatch(std::size_t n_rows, std::size_t n0,
                                          RngStream& rng);
std::vector<Transition> sample_minibatch(const OfflineDataset& dataset,
                                         std::size_t n0, RngStream& rng);

/// Text format:
///   n_individuals,T,d_s,n_actions
///   <N>,<T>,<d_s>,<n_actions>
///   individual,t,group,s_0..s_{d-1},action,reward,ns_0..ns_{d-1}
///   one row per transition
/// Reals are written in shortest round-trip form, so save/load is bit-exact.
void save_dataset(const OfflineDataset& dataset, const std::filesystem::path& path);
/// Throws ParseError (with line number) on malformed input and SchemaError
/// when rows disagree with the header.
OfflineDataset load_dataset(const std::filesystem::path& path);

}  // namespace p4l
