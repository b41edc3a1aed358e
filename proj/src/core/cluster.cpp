#include "p4l/core/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "p4l/kernels.hpp"

namespace p4l {

std::size_t nearest_centroid(const double* x, const std::vector<double>& centroids,
                             std::size_t K, std::size_t d) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    const double dk = kernels::squared_distance({x, d}, {centroids.data() + k * d, d});
    if (dk < best_d) {
      best_d = dk;
      best = k;
    }
  }
  return best;
}

namespace {

std::vector<double> seed_plus_plus(const std::vector<double>& pts, std::size_t n, std::size_t d,
                                   std::size_t K, RngStream& rng) {
  std::vector<double> c;
  c.reserve(K * d);
  std::vector<char> chosen(n, 0);
  const std::size_t first = static_cast<std::size_t>(rng.below(n));
  chosen[first] = 1;
  c.insert(c.end(), pts.begin() + first * d, pts.begin() + (first + 1) * d);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i)
    d2[i] = kernels::squared_distance({pts.data() + i * d, d}, {c.data(), d});
  for (std::size_t k = 1; k < K; ++k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        target -= d2[i];
        if (target < 0.0) break;
      }
    }
    if (pick == n) {
      // Fewer distinct points than K: take the lowest unused index.
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    chosen[pick] = 1;
    c.insert(c.end(), pts.begin() + pick * d, pts.begin() + (pick + 1) * d);
    const double* ck = c.data() + k * d;
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], kernels::squared_distance({pts.data() + i * d, d}, {ck, d}));
  }
  return c;
}

KMeansResult lloyd(const std::vector<double>& pts, std::size_t n, std::size_t d, std::size_t K,
                   std::vector<double> c, std::size_t max_iters) {
  KMeansResult r;
  r.assignment.assign(n, 0);
  std::vector<double> sums(K * d);
  std::vector<std::size_t> counts(K);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    bool changed = it == 0;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = pts.data() + i * d;
      const std::size_t k = nearest_centroid(x, c, K, d);
      inertia += kernels::squared_distance({x, d}, {c.data() + k * d, d});
      if (r.assignment[i] != k) changed = true;
      r.assignment[i] = k;
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    r.iterations = it + 1;
    if (!changed) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = r.assignment[i];
      ++counts[k];
      for (std::size_t j = 0; j < d; ++j) sums[k * d + j] += pts[i * d + j];
    }
    for (std::size_t k = 0; k < K; ++k)
      if (counts[k] > 0)
        for (std::size_t j = 0; j < d; ++j)
          c[k * d + j] = sums[k * d + j] / static_cast<double>(counts[k]);
  }
  r.centroids = std::move(c);
  return r;
}

}  // namespace

KMeansResult kmeans(const std::vector<double>& points, std::size_t n, std::size_t d,
                    std::size_t K, RngStream& rng, const KMeansOptions& options) {
  if (K == 0) throw std::invalid_argument("kmeans: K must be >= 1");
  if (n < K) throw std::invalid_argument("kmeans: need at least K points");
  if (points.size() != n * d) throw std::invalid_argument("kmeans: points must be n x d");
  KMeansResult best;
  bool have = false;
  auto consider = [&](KMeansResult r) {
    if (!have || r.inertia < best.inertia) {
      best = std::move(r);
      have = true;
    }
  };
  if (options.warm_start) {
    if (options.warm_start->size() != K * d)
      throw std::invalid_argument("kmeans: warm start must be K x d");
    consider(lloyd(points, n, d, K, *options.warm_start, options.max_iters));
  }
  for (std::size_t run = 0; run < std::max<std::size_t>(options.n_init, 1); ++run)
    consider(lloyd(points, n, d, K, seed_plus_plus(points, n, d, K, rng), options.max_iters));
  return best;
}

std::vector<std::size_t> average_linkage(const std::vector<double>& dist, std::size_t n,
                                         std::size_t K) {
  if (K == 0 || K > n) throw std::invalid_argument("average_linkage: need 1 <= K <= n");
  if (dist.size() != n * n) throw std::invalid_argument("average_linkage: dist must be n x n");
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  std::vector<double> d = dist;
  std::vector<char> alive(n, 1);
  for (std::size_t clusters = n; clusters > K; --clusters) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        if (d[i * n + j] < best) {
          best = d[i * n + j];
          bi = i;
          bj = j;
        }
      }
    }
    const double wi = static_cast<double>(members[bi].size());
    const double wj = static_cast<double>(members[bj].size());
    for (std::size_t k = 0; k < n; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      const double v = (wi * d[bi * n + k] + wj * d[bj * n + k]) / (wi + wj);
      d[bi * n + k] = d[k * n + bi] = v;
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    members[bj].clear();
    alive[bj] = 0;
  }
  std::vector<std::size_t> raw(n);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t i : members[c]) raw[i] = c;
  std::vector<std::size_t> relabel(n, n), out(n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (relabel[raw[i]] == n) relabel[raw[i]] = next++;
    out[i] = relabel[raw[i]];
  }
  return out;
}

double silhouette(const std::vector<double>& dist, std::size_t n,
                  const std::vector<std::size_t>& labels) {
  if (labels.size() != n) throw std::invalid_argument("silhouette: label count mismatch");
  const std::size_t K = n ? *std::max_element(labels.begin(), labels.end()) + 1 : 0;
  if (K < 2) return 0.0;
  std::vector<std::size_t> size(K, 0);
  for (std::size_t l : labels) ++size[l];
  double total = 0.0;
  std::vector<double> acc(K);
  for (std::size_t i = 0; i < n; ++i) {
    if (size[labels[i]] <= 1) continue;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) acc[labels[j]] += dist[i * n + j];
    const double a = acc[labels[i]] / static_cast<double>(size[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k)
      if (k != labels[i] && size[k] > 0) b = std::min(b, acc[k] / static_cast<double>(size[k]));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

double best_permutation_accuracy(const std::vector<std::size_t>& labels,
                                 const std::vector<int>& truth) {
  if (labels.size() != truth.size() || labels.empty())
    throw std::invalid_argument("best_permutation_accuracy: size mismatch");
  std::size_t kp = 0, kt = 0;
  for (std::size_t l : labels) kp = std::max(kp, l + 1);
  for (int t : truth) {
    if (t < 0) throw std::invalid_argument("best_permutation_accuracy: unknown truth label");
    kt = std::max(kt, static_cast<std::size_t>(t) + 1);
  }
  const std::size_t m = std::max(kp, kt);
  if (m > 8) throw std::invalid_argument("best_permutation_accuracy: too many labels");
  std::vector<std::size_t> counts(m * m, 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    ++counts[labels[i] * m + static_cast<std::size_t>(truth[i])];
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t best = 0;
  do {
    std::size_t hit = 0;
    for (std::size_t k = 0; k < m; ++k) hit += counts[k * m + perm[k]];
    best = std::max(best, hit);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(labels.size());
}

}  // namespace p4l
