#pragma once

// Comparison methods on the same features: pooled fitted-Q iteration and a
// cluster-then-FQI surrogate for auto-clustered policy iteration.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "p4l/core/dataset.hpp"
#include "p4l/envs/envs.hpp"
#include "p4l/eval/eval.hpp"
#include "p4l/features/rbf.hpp"
#include "p4l/models/loss.hpp"

namespace p4l::baselines {

enum class Method { FQI, ClusterFQI, Behavior };

std::string method_name(Method m);

/// Q(s, a) = w_a^T [phi(s); 1] with one weight block per action.
struct LinearQ {
  std::size_t n_features = 0;
  std::size_t n_actions = 0;
  std::vector<double> w;  // n_actions x (n_features + 1)

  double value(std::span<const double> phi, int a) const;
  /// Greedy action; ties go to the lowest index.
  int greedy(std::span<const double> phi) const;
  bool operator==(const LinearQ&) const = default;
};

struct FqiOptions {
  std::size_t iters = 100;
  double ridge = 1e-4;
};

/// Iterates w_{k+1} = argmin sum (R + gamma max_a' Q_k(S+, a') - Q(S, A))^2
/// + ridge |w|^2 from w_0 = 0, one ridge regression per action.
LinearQ fit_fqi(const models::TransitionBatch& batch, std::size_t n_actions, double gamma,
                const FqiOptions& options);

struct BaselinePolicy {
  Method method = Method::FQI;
  RbfBasis basis;
  std::vector<LinearQ> q;  // one per cluster
  /// Cluster of each individual; every entry indexes `q`.
  std::vector<std::size_t> assignment;

  std::size_t cluster_of(std::size_t individual) const;
  int act(std::size_t individual, std::span<const double> s) const;
  bool operator==(const BaselinePolicy&) const = default;
};

/// Featurized transitions of the given individuals (all when empty).
models::TransitionBatch featurize_rows(const OfflineDataset& dataset, const RbfBasis& basis,
                                       const std::vector<std::size_t>& individuals = {});

BaselinePolicy run_fqi(const OfflineDataset& dataset, const RbfBasis& basis, double gamma,
                       const FqiOptions& options = {});

/// FQI within each cluster of a given assignment (values in [0, K)).
BaselinePolicy run_cluster_fqi(const OfflineDataset& dataset, const RbfBasis& basis,
                               const std::vector<std::size_t>& assignment, std::size_t K,
                               double gamma, const FqiOptions& options = {});

/// Clusters individuals by average linkage on their transition-density
/// distances cut at K, then runs FQI per cluster.
BaselinePolicy run_cluster_fqi(const OfflineDataset& dataset, const RbfBasis& basis,
                               std::size_t K, double gamma, const FqiOptions& options = {});

/// Monte-Carlo value of the behavior policy itself.
eval::McValue behavior_value(const envs::EnvParams& env, const envs::BehaviorPolicy& behavior,
                             double gamma, const eval::McOptions& options, const RngStream& rng);

void write_baseline(std::ostream& os, const BaselinePolicy& policy);
BaselinePolicy read_baseline(std::istream& is);

}  // namespace p4l::baselines
