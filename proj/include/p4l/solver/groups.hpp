#pragma once

// Individual-level structure from the transitions alone: distances between
// per-individual kernel estimates of the transition law, the number of
// groups, and an initial latent embedding.

#include <cstddef>
#include <vector>

#include "p4l/core/dataset.hpp"
#include "p4l/models/loss.hpp"

namespace p4l::solver {

struct KdeOptions {
  /// Evenly spaced rows per individual entering the estimate (0 = all).
  std::size_t max_rows = 0;
  /// Drop absorbing padding rows (reward 0 and next_state == state).
  bool skip_absorbing = true;
  /// Evaluation nodes drawn evenly from the pooled rows (0 = all).
  std::size_t n_nodes = 512;
};

/// Symmetric N x N matrix of root-mean-square differences between the
/// individuals' Gaussian-kernel estimates of the transition law
/// p(s' | s, a), evaluated on a fixed node set of pooled (s, a, s') rows.
/// Coordinates are standardized by their pooled standard deviations and the
/// bandwidth follows Scott's rule.
std::vector<double> transition_distances(const OfflineDataset& dataset,
                                         const KdeOptions& options = {});

struct GroupSelection {
  std::size_t K = 1;
  /// silhouette[k - 1] for k = 2..K_max; entry 0 is unused (0).
  std::vector<double> silhouette;
  std::vector<std::size_t> labels;
  std::vector<double> distances;
};

/// Average-linkage clustering cut at each K in 2..K_max; the K with the
/// largest silhouette wins, or K = 1 when no silhouette reaches
/// `min_silhouette` (or every distance is zero).
GroupSelection select_num_groups(const OfflineDataset& dataset, std::size_t K_max,
                                 double min_silhouette = 0.2, const KdeOptions& options = {});
GroupSelection select_num_groups(const std::vector<double>& distances, std::size_t n,
                                 std::size_t K_max, double min_silhouette = 0.2);

/// Classical multidimensional scaling of a distance matrix into `dim`
/// coordinates, rescaled so the rows have root-mean-square norm `scale`.
models::LatentTable embed_individuals(const std::vector<double>& distances, std::size_t n,
                                      std::size_t dim, double scale);

}  // namespace p4l::solver
