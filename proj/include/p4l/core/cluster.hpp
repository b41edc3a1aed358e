#pragma once

// Clustering primitives shared by feature fitting, the ADMM (v, w) block,
// group-number selection and the cluster-then-FQI baseline.

#include <cstddef>
#include <vector>

#include "p4l/core/rng.hpp"

namespace p4l {

struct KMeansResult {
  std::vector<double> centroids;        // K x d, row-major
  std::vector<std::size_t> assignment;  // one entry per point
  double inertia = 0.0;
  std::size_t iterations = 0;
  /// Inertia after every assignment pass of the best run.
  std::vector<double> inertia_history;
};

struct KMeansOptions {
  std::size_t max_iters = 300;
  /// Independent k-means++ seedings; the lowest-inertia run wins.
  std::size_t n_init = 1;
  /// Optional extra starting centroids (K x d) competing with the seedings.
  const std::vector<double>* warm_start = nullptr;
};

/// Lloyd's algorithm with k-means++ seeding over `n` points of dimension `d`
/// (row-major). Ties in the nearest-centroid assignment go to the lowest
/// index; an emptied cluster keeps its previous centroid. Throws
/// std::invalid_argument when n < K or K == 0.
KMeansResult kmeans(const std::vector<double>& points, std::size_t n, std::size_t d,
                    std::size_t K, RngStream& rng, const KMeansOptions& options = {});

/// Nearest row of `centroids` (K x d) to `x`, lowest index on ties.
std::size_t nearest_centroid(const double* x, const std::vector<double>& centroids,
                             std::size_t K, std::size_t d);

/// Average-linkage agglomerative clustering on a symmetric n x n distance
/// matrix, cut at K clusters. Labels are renumbered by first appearance.
std::vector<std::size_t> average_linkage(const std::vector<double>& dist, std::size_t n,
                                         std::size_t K);

/// Mean silhouette of a labelling under a precomputed distance matrix.
/// Singleton clusters contribute 0.
double silhouette(const std::vector<double>& dist, std::size_t n,
                  const std::vector<std::size_t>& labels);

/// Fraction of items whose label matches the truth under the best
/// one-to-one relabelling (brute force over permutations; K <= 8).
double best_permutation_accuracy(const std::vector<std::size_t>& labels,
                                 const std::vector<int>& truth);

}  // namespace p4l
