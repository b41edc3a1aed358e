#include "p4l/solver/groups.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "p4l/core/cluster.hpp"
#include "p4l/kernels.hpp"

namespace p4l::solver {

namespace {

struct Sample {
  std::vector<double> z;  // rows x D
  std::vector<int> action;
  std::size_t rows = 0;
};

bool absorbing(const Transition& tr) { return tr.reward == 0.0 && tr.next_state == tr.state; }

}  // namespace

std::vector<double> transition_distances(const OfflineDataset& ds, const KdeOptions& opt) {
  const std::size_t N = ds.n_individuals(), d = ds.state_dim(), D = 2 * d;
  if (N == 0) throw std::invalid_argument("transition_distances: empty dataset");
  std::vector<Sample> samples(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto rows = ds.individual(i);
    std::vector<const Transition*> keep;
    for (const Transition& tr : rows)
      if (!opt.skip_absorbing || !absorbing(tr)) keep.push_back(&tr);
    if (keep.empty())
      for (const Transition& tr : rows) keep.push_back(&tr);
    const std::size_t n = opt.max_rows && keep.size() > opt.max_rows ? opt.max_rows : keep.size();
    Sample& s = samples[i];
    s.rows = n;
    for (std::size_t k = 0; k < n; ++k) {
      const Transition& tr = *keep[k * keep.size() / n];
      s.z.insert(s.z.end(), tr.state.begin(), tr.state.end());
      s.z.insert(s.z.end(), tr.next_state.begin(), tr.next_state.end());
      s.action.push_back(tr.action);
    }
  }

  // Standardize every coordinate by its pooled standard deviation.
  std::vector<double> mean(D, 0.0), sd(D, 0.0);
  std::size_t total = 0;
  for (const Sample& s : samples) {
    total += s.rows;
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < D; ++c) mean[c] += s.z[r * D + c];
  }
  for (double& m : mean) m /= static_cast<double>(total);
  for (const Sample& s : samples)
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < D; ++c) sd[c] += std::pow(s.z[r * D + c] - mean[c], 2);
  for (double& v : sd) {
    v = std::sqrt(v / static_cast<double>(total));
    if (!(v > 0.0)) v = 1.0;
  }
  for (Sample& s : samples)
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < D; ++c) s.z[r * D + c] /= sd[c];

  // Scott's rule on the average per-individual sample size.
  const double n_avg = static_cast<double>(total) / static_cast<double>(N);
  const double h = std::pow(n_avg, -1.0 / (static_cast<double>(D) + 4.0));
  const double inv_2h2 = 1.0 / (2.0 * h * h);

  // Evaluation nodes: evenly spaced rows of the pooled standardized sample.
  std::vector<const double*> node_z;
  std::vector<int> node_a;
  {
    std::vector<std::pair<const double*, int>> pool;
    for (const Sample& smp : samples)
      for (std::size_t r = 0; r < smp.rows; ++r) pool.emplace_back(smp.z.data() + r * D, smp.action[r]);
    const std::size_t m = opt.n_nodes && pool.size() > opt.n_nodes ? opt.n_nodes : pool.size();
    for (std::size_t k = 0; k < m; ++k) {
      node_z.push_back(pool[k * pool.size() / m].first);
      node_a.push_back(pool[k * pool.size() / m].second);
    }
  }
  const std::size_t M = node_z.size();

  // Conditional density p_i(s' | s, a) at every node (Nadaraya-Watson form).
  // The Gaussian normalizations cancel in the distance ranking and are dropped.
  std::vector<double> dens(N * M, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const Sample& smp = samples[i];
    for (std::size_t k = 0; k < M; ++k) {
      double num = 0.0, den = 0.0;
      for (std::size_t r = 0; r < smp.rows; ++r) {
        if (smp.action[r] != node_a[k]) continue;
        const double* z = smp.z.data() + r * D;
        const double ks =
            std::exp(-kernels::squared_distance({z, d}, {node_z[k], d}) * inv_2h2);
        const double kn =
            std::exp(-kernels::squared_distance({z + d, d}, {node_z[k] + d, d}) * inv_2h2);
        num += ks * kn;
        den += ks;
      }
      dens[i * M + k] = den > 1e-300 ? num / den : 0.0;
    }
  }
  std::vector<double> dist(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j) {
      const double sq = kernels::squared_distance({dens.data() + i * M, M}, {dens.data() + j * M, M});
      dist[i * N + j] = dist[j * N + i] = std::sqrt(sq / static_cast<double>(std::max<std::size_t>(M, 1)));
    }
  return dist;
}

GroupSelection select_num_groups(const std::vector<double>& dist, std::size_t n,
                                 std::size_t K_max, double min_silhouette) {
  if (K_max == 0) throw std::invalid_argument("select_num_groups: K_max must be >= 1");
  if (dist.size() != n * n) throw std::invalid_argument("select_num_groups: distances not n x n");
  GroupSelection sel;
  sel.distances = dist;
  sel.labels.assign(n, 0);
  sel.silhouette.assign(std::max<std::size_t>(K_max, 1), 0.0);
  const bool degenerate = std::all_of(dist.begin(), dist.end(), [](double x) { return x <= 0.0; });
  if (degenerate || n < 3) return sel;
  double best = -2.0;
  for (std::size_t K = 2; K <= std::min(K_max, n - 1); ++K) {
    const auto labels = average_linkage(dist, n, K);
    const double s = silhouette(dist, n, labels);
    sel.silhouette[K - 1] = s;
    if (s > best) {
      best = s;
      if (s >= min_silhouette) {
        sel.K = K;
        sel.labels = labels;
      }
    }
  }
  return sel;
}

GroupSelection select_num_groups(const OfflineDataset& dataset, std::size_t K_max,
                                 double min_silhouette, const KdeOptions& options) {
  const std::size_t n = dataset.n_individuals();
  return select_num_groups(transition_distances(dataset, options), n, K_max, min_silhouette);
}

models::LatentTable embed_individuals(const std::vector<double>& dist, std::size_t n,
                                      std::size_t dim, double scale) {
  if (dist.size() != n * n) throw std::invalid_argument("embed_individuals: distances not n x n");
  models::LatentTable out(n, dim);
  if (n == 0 || dim == 0) return out;
  Eigen::MatrixXd B(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) B(i, j) = -0.5 * dist[i * n + j] * dist[i * n + j];
  const Eigen::VectorXd row_mean = B.rowwise().mean();
  const double grand = B.mean();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) B(i, j) += grand - row_mean(i) - row_mean(j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(B);
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const Eigen::MatrixXd& vecs = eig.eigenvectors();
  for (std::size_t c = 0; c < std::min(dim, n); ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(n - 1 - c);
    const double lam = vals(col);
    if (!(lam > 1e-12 * std::max(1.0, std::abs(vals(static_cast<Eigen::Index>(n - 1))))))
      break;
    Eigen::VectorXd v = vecs.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t i = 0; i < n; ++i)
      out.data[i * dim + c] = v(static_cast<Eigen::Index>(i)) * std::sqrt(lam);
  }
  double sq = 0.0;
  for (double x : out.data) sq += x * x;
  const double rms = std::sqrt(sq / static_cast<double>(n));
  if (rms > 0.0)
    for (double& x : out.data) x *= scale / rms;
  return out;
}

}  // namespace p4l::solver
