#include "p4l/solver/solver.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "p4l/core/cluster.hpp"
#include "p4l/core/error.hpp"
#include "p4l/core/text.hpp"
#include "p4l/kernels.hpp"
#include "p4l/solver/groups.hpp"

namespace p4l::solver {

using models::GradRequest;
using models::LossKind;
using models::LossSpec;

// ---------------------------------------------------------------- data

TransitionBatch TrainingData::rows(std::span<const std::size_t> idx) const {
  TransitionBatch b;
  b.n_features = n_features();
  b.phi.reserve(idx.size() * n_features());
  b.phi_next.reserve(idx.size() * n_features());
  for (std::size_t k : idx)
    b.push(transitions.phi_row(k), transitions.action[k], transitions.reward[k],
           transitions.next_row(k), transitions.individual[k]);
  return b;
}

InitialBatch TrainingData::pairs(std::span<const std::size_t> idx, double scale) const {
  InitialBatch b;
  b.n_features = n_features();
  b.scale = scale;
  b.phi.reserve(idx.size() * n_features());
  for (std::size_t p : idx) b.push(initial_row(p % n_initial), p / n_initial);
  return b;
}

InitialBatch TrainingData::all_pairs(double gamma) const {
  std::vector<std::size_t> idx(n_pairs());
  for (std::size_t p = 0; p < idx.size(); ++p) idx[p] = p;
  return pairs(idx, (1.0 - gamma) / static_cast<double>(n_initial));
}

TrainingData prepare_training_data(const OfflineDataset& ds, const RbfBasis& basis,
                                   const std::vector<double>& extra_initial) {
  if (ds.empty()) throw std::invalid_argument("prepare_training_data: empty dataset");
  const std::size_t d = ds.state_dim();
  if (basis.state_dim != d)
    throw std::invalid_argument("prepare_training_data: basis dimension mismatch");
  if (extra_initial.size() % d != 0)
    throw std::invalid_argument("prepare_training_data: extra initial states not n x d_s");
  TrainingData data;
  data.n_individuals = ds.n_individuals();
  data.horizon = ds.horizon();
  data.n_actions = ds.n_actions();
  const std::size_t J = basis.size();
  data.transitions.n_features = J;
  std::vector<double> phi(J), phi_next(J);
  for (const Transition& tr : ds.transitions()) {
    featurize(basis, tr.state, phi);
    featurize(basis, tr.next_state, phi_next);
    data.transitions.push(phi, tr.action, tr.reward, phi_next, tr.individual);
  }
  const std::vector<double> s0 = ds.initial_states();
  data.n_initial = ds.n_individuals() + extra_initial.size() / d;
  data.initial_phi.reserve(data.n_initial * J);
  auto add = [&](const std::vector<double>& rows) {
    for (std::size_t r = 0; r < rows.size() / d; ++r) {
      featurize(basis, std::span<const double>(rows.data() + r * d, d), phi);
      data.initial_phi.insert(data.initial_phi.end(), phi.begin(), phi.end());
    }
  };
  add(s0);
  add(extra_initial);
  return data;
}

// ---------------------------------------------------------- objectives

double phi_hat(const ModelBundle& bundle, const LatentTable& latents,
               const TransitionBatch& batch, double gamma) {
  return models::evaluate_loss(bundle, LossSpec{LossKind::PhiHat, gamma}, batch, {}, latents);
}

double value_term(const ModelBundle& bundle, const LatentTable& latents,
                  const TrainingData& data, double gamma) {
  return models::evaluate_loss(bundle, LossSpec{LossKind::ValueTerm, gamma}, {},
                               data.all_pairs(gamma), latents);
}

double lagrangian(const ModelBundle& bundle, const LatentTable& latents, double lambda,
                  double alpha, const TrainingData& data, double gamma) {
  if (lambda < 0.0) throw std::invalid_argument("lagrangian: negative lambda");
  return models::evaluate_loss(bundle, LossSpec{LossKind::Lagrangian, gamma, lambda, alpha},
                               data.transitions, data.all_pairs(gamma), latents);
}

namespace {

void check_centroids(const LatentTable& u, const std::vector<double>& v, std::size_t K) {
  if (K == 0) throw std::invalid_argument("penalty: K must be >= 1");
  if (v.size() != K * u.dim) throw std::invalid_argument("penalty: centroids must be K x d_u");
}

}  // namespace

double penalty(const LatentTable& u, const std::vector<double>& v, std::size_t K, double mu) {
  check_centroids(u, v, K);
  double total = 0.0;
  for (std::size_t i = 0; i < u.n; ++i) {
    const std::size_t k = nearest_centroid(u.row(i).data(), v, K, u.dim);
    total += kernels::squared_distance(u.row(i), {v.data() + k * u.dim, u.dim});
  }
  return mu * total;
}

std::vector<double> penalty_grad(const LatentTable& u, const std::vector<double>& v,
                                 std::size_t K, double mu) {
  check_centroids(u, v, K);
  std::vector<double> g(u.data.size());
  for (std::size_t i = 0; i < u.n; ++i) {
    const std::size_t k = nearest_centroid(u.row(i).data(), v, K, u.dim);
    for (std::size_t m = 0; m < u.dim; ++m)
      g[i * u.dim + m] = 2.0 * mu * (u.data[i * u.dim + m] - v[k * u.dim + m]);
  }
  return g;
}

// -------------------------------------------------------- frozen cache

void FrozenCache::Memo::resize(std::size_t n, std::size_t w) {
  width = w;
  values.assign(n * w, 0.0);
  stamp.assign(n, 0);
}

FrozenCache::FrozenCache(const TrainingData& data) : data_(&data) {
  const std::size_t n = data.transitions.size();
  const std::size_t A = data.n_actions;
  delta_.resize(n, 1);
  f_sa_.resize(n, 1);
  pi_next_.resize(n, A);
  q_next_.resize(n, A + 1);
  pair_pi_.resize(data.n_pairs(), A);
  pair_q_.resize(data.n_pairs(), A);
  d_raw_.resize(A);
  probs_.resize(A);
  tmp_.resize(A);
}

void FrozenCache::reset() {
  if (++epoch_ == 0) {
    for (Memo* m : {&delta_, &f_sa_, &pi_next_, &q_next_, &pair_pi_, &pair_q_})
      std::fill(m->stamp.begin(), m->stamp.end(), 0u);
    epoch_ = 1;
  }
}

bool FrozenCache::fresh(Memo& m, std::size_t k) {
  if (m.stamp[k] == epoch_) return false;
  m.stamp[k] = epoch_;
  return true;
}

namespace {

void require(const TrainingData* data, const ModelBundle& b, const LatentTable& lat) {
  if (!data) throw std::logic_error("FrozenCache: not bound to training data");
  if (b.spec.n_features != data->n_features() || b.spec.n_actions != data->n_actions)
    throw std::invalid_argument("FrozenCache: bundle does not match the training data");
  if (lat.n != data->n_individuals || lat.dim != b.spec.latent_dim)
    throw std::invalid_argument("FrozenCache: latent table shape mismatch");
}

}  // namespace

double FrozenCache::f_grad(const ModelBundle& b, const LatentTable& lat, double gamma,
                           std::span<const std::size_t> rows, std::vector<double>& grad) {
  require(data_, b, lat);
  if (rows.empty()) throw std::invalid_argument("f_grad: empty batch");
  const auto& tb = data_->transitions;
  const std::size_t A = b.spec.n_actions;
  const double qb = b.spec.q_bound, fb = b.spec.f_bound;
  const double c = 1.0 / static_cast<double>(rows.size());
  grad.assign(b.f_params.size(), 0.0);
  double total = 0.0;
  for (std::size_t k : rows) {
    const auto u = lat.row(tb.individual[k]);
    const auto a = static_cast<std::size_t>(tb.action[k]);
    if (fresh(delta_, k)) {
      models::forward(b.spec, b.q_params, tb.next_row(k), u, ws_);
      models::forward(b.spec, b.pi_params, tb.next_row(k), u, ws2_);
      models::softmax(ws2_.raw, probs_);
      double next = 0.0;
      for (std::size_t a2 = 0; a2 < A; ++a2) next += probs_[a2] * models::squash(ws_.raw[a2], qb);
      models::forward(b.spec, b.q_params, tb.phi_row(k), u, ws_);
      delta_.values[k] = tb.reward[k] + gamma * next - models::squash(ws_.raw[a], qb);
    }
    const double delta = delta_.values[k];
    models::forward(b.spec, b.f_params, tb.phi_row(k), u, ws_);
    total += models::squash(ws_.raw[a], fb) * delta;
    std::fill(d_raw_.begin(), d_raw_.end(), 0.0);
    d_raw_[a] = c * delta * models::squash_derivative(ws_.raw[a], fb);
    models::backward(b.spec, b.f_params, ws_, d_raw_, grad, {});
  }
  return c * total;
}

double FrozenCache::q_grad(const ModelBundle& b, const LatentTable& lat, double gamma,
                           double lambda, std::span<const std::size_t> rows,
                           std::span<const std::size_t> pairs, double pair_scale,
                           std::vector<double>& grad) {
  require(data_, b, lat);
  const auto& tb = data_->transitions;
  const std::size_t A = b.spec.n_actions;
  const double qb = b.spec.q_bound, fb = b.spec.f_bound;
  grad.assign(b.q_params.size(), 0.0);
  double total = 0.0;
  if (!rows.empty()) {
    const double c = lambda / static_cast<double>(rows.size());
    double phi = 0.0;
    for (std::size_t k : rows) {
      const auto u = lat.row(tb.individual[k]);
      const auto a = static_cast<std::size_t>(tb.action[k]);
      if (fresh(f_sa_, k)) {
        models::forward(b.spec, b.f_params, tb.phi_row(k), u, ws_);
        f_sa_.values[k] = models::squash(ws_.raw[a], fb);
      }
      double* pn = pi_next_.values.data() + k * A;
      if (fresh(pi_next_, k)) {
        models::forward(b.spec, b.pi_params, tb.next_row(k), u, ws_);
        models::softmax(ws_.raw, {pn, A});
      }
      const double f = f_sa_.values[k];
      models::forward(b.spec, b.q_params, tb.next_row(k), u, ws_);
      double next = 0.0;
      for (std::size_t a2 = 0; a2 < A; ++a2) {
        next += pn[a2] * models::squash(ws_.raw[a2], qb);
        d_raw_[a2] = c * f * gamma * pn[a2] * models::squash_derivative(ws_.raw[a2], qb);
      }
      models::backward(b.spec, b.q_params, ws_, d_raw_, grad, {});
      models::forward(b.spec, b.q_params, tb.phi_row(k), u, ws_);
      phi += f * (tb.reward[k] + gamma * next - models::squash(ws_.raw[a], qb));
      std::fill(d_raw_.begin(), d_raw_.end(), 0.0);
      d_raw_[a] = -c * f * models::squash_derivative(ws_.raw[a], qb);
      models::backward(b.spec, b.q_params, ws_, d_raw_, grad, {});
    }
    total += c * phi;
  }
  const std::size_t M = data_->n_initial;
  double v = 0.0;
  for (std::size_t p : pairs) {
    const auto u = lat.row(p / M);
    const auto s0 = data_->initial_row(p % M);
    double* pp = pair_pi_.values.data() + p * A;
    if (fresh(pair_pi_, p)) {
      models::forward(b.spec, b.pi_params, s0, u, ws_);
      models::softmax(ws_.raw, {pp, A});
    }
    models::forward(b.spec, b.q_params, s0, u, ws_);
    for (std::size_t a = 0; a < A; ++a) {
      v += pp[a] * models::squash(ws_.raw[a], qb);
      d_raw_[a] = pair_scale * pp[a] * models::squash_derivative(ws_.raw[a], qb);
    }
    models::backward(b.spec, b.q_params, ws_, d_raw_, grad, {});
  }
  return total + pair_scale * v;
}

double FrozenCache::pi_grad(const ModelBundle& b, const LatentTable& lat, double gamma,
                            double lambda, std::span<const std::size_t> rows,
                            std::span<const std::size_t> pairs, double pair_scale,
                            std::vector<double>& grad) {
  require(data_, b, lat);
  const auto& tb = data_->transitions;
  const std::size_t A = b.spec.n_actions;
  const double qb = b.spec.q_bound, fb = b.spec.f_bound;
  grad.assign(b.pi_params.size(), 0.0);
  auto softmax_back = [&](double* dp) {
    double dot = 0.0;
    for (std::size_t a = 0; a < A; ++a) dot += probs_[a] * dp[a];
    for (std::size_t a = 0; a < A; ++a) d_raw_[a] = probs_[a] * (dp[a] - dot);
  };
  double total = 0.0;
  if (!rows.empty()) {
    const double c = lambda / static_cast<double>(rows.size());
    double phi = 0.0;
    for (std::size_t k : rows) {
      const auto u = lat.row(tb.individual[k]);
      const auto a = static_cast<std::size_t>(tb.action[k]);
      if (fresh(f_sa_, k)) {
        models::forward(b.spec, b.f_params, tb.phi_row(k), u, ws_);
        f_sa_.values[k] = models::squash(ws_.raw[a], fb);
      }
      double* qn = q_next_.values.data() + k * (A + 1);
      if (fresh(q_next_, k)) {
        models::forward(b.spec, b.q_params, tb.next_row(k), u, ws_);
        for (std::size_t a2 = 0; a2 < A; ++a2) qn[a2] = models::squash(ws_.raw[a2], qb);
        models::forward(b.spec, b.q_params, tb.phi_row(k), u, ws_);
        qn[A] = models::squash(ws_.raw[a], qb);
      }
      const double f = f_sa_.values[k];
      models::forward(b.spec, b.pi_params, tb.next_row(k), u, ws_);
      models::softmax(ws_.raw, probs_);
      double next = 0.0;
      for (std::size_t a2 = 0; a2 < A; ++a2) {
        next += probs_[a2] * qn[a2];
        tmp_[a2] = c * f * gamma * qn[a2];
      }
      phi += f * (tb.reward[k] + gamma * next - qn[A]);
      softmax_back(tmp_.data());
      models::backward(b.spec, b.pi_params, ws_, d_raw_, grad, {});
    }
    total += c * phi;
  }
  const std::size_t M = data_->n_initial;
  double v = 0.0;
  for (std::size_t p : pairs) {
    const auto u = lat.row(p / M);
    const auto s0 = data_->initial_row(p % M);
    double* pq = pair_q_.values.data() + p * A;
    if (fresh(pair_q_, p)) {
      models::forward(b.spec, b.q_params, s0, u, ws_);
      for (std::size_t a = 0; a < A; ++a) pq[a] = models::squash(ws_.raw[a], qb);
    }
    models::forward(b.spec, b.pi_params, s0, u, ws_);
    models::softmax(ws_.raw, probs_);
    for (std::size_t a = 0; a < A; ++a) {
      v += probs_[a] * pq[a];
      tmp_[a] = pair_scale * pq[a];
    }
    softmax_back(tmp_.data());
    models::backward(b.spec, b.pi_params, ws_, d_raw_, grad, {});
  }
  return total + pair_scale * v;
}

// ---------------------------------------------------------- inner loops

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Window-mean stopping rule for a noisy objective.
class StopRule {
 public:
  StopRule(double tol, std::size_t patience, std::size_t every)
      : tol_(tol), patience_(patience), every_(std::max<std::size_t>(every, 1)) {}

  bool add(double objective) {
    sum_ += objective;
    if (++count_ < every_) return false;
    const double mean = sum_ / static_cast<double>(count_);
    sum_ = 0.0;
    count_ = 0;
    if (has_prev_) {
      const double rel = std::abs(mean - prev_) / std::max(std::abs(prev_), 1e-12);
      hits_ = rel < tol_ ? hits_ + 1 : 0;
    }
    prev_ = mean;
    has_prev_ = true;
    return hits_ >= patience_;
  }

 private:
  double tol_;
  std::size_t patience_, every_;
  double sum_ = 0.0, prev_ = 0.0;
  std::size_t count_ = 0, hits_ = 0;
  bool has_prev_ = false;
};

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> all(n);
  for (std::size_t k = 0; k < n; ++k) all[k] = k;
  return all;
}

std::vector<std::size_t> draw(std::size_t n, std::size_t want, RngStream& rng) {
  if (want == 0 || want >= n) return iota(n);
  return sample_minibatch(n, want, rng);
}

double pair_scale(const TrainingData& data, double gamma, std::size_t n_drawn) {
  // Unbiased for (1 - gamma) sum_i mean_m under uniform pair sampling.
  return (1.0 - gamma) * static_cast<double>(data.n_individuals) / static_cast<double>(n_drawn);
}

void negate_output(const models::NetworkSpec& spec, std::vector<double>& params) {
  for (std::size_t k : models::output_layer_indices(spec)) params[k] = -params[k];
}

InnerReport ascend_f(ModelBundle& b, const LatentTable& lat, const TrainingData& data,
                     double gamma, const InnerOptions& opt, RngStream& rng, FrozenCache& cache) {
  InnerReport rep;
  StopRule stop(opt.tol, opt.patience, opt.check_every);
  std::vector<double> grad;
  for (std::size_t s = 0; s < opt.budget; ++s) {
    const auto rows = draw(data.transitions.size(), opt.minibatch, rng);
    const double obj = cache.f_grad(b, lat, gamma, rows, grad);
    if (!std::isfinite(obj) || !all_finite(grad))
      throw DivergenceError("f ascent produced a non-finite value", "step " + std::to_string(s));
    kernels::axpy(opt.lr, grad, b.f_params);
    ++rep.steps;
    if (stop.add(obj)) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

double full_phi_hat_f(const ModelBundle& b, const LatentTable& lat, const TrainingData& data,
                      double gamma, FrozenCache& cache) {
  const auto rows = iota(data.transitions.size());
  std::vector<double> grad;
  return cache.f_grad(b, lat, gamma, rows, grad);
}

}  // namespace

MaxPhiResult max_phi_hat(const ModelBundle& bundle, const LatentTable& latents,
                         const TrainingData& data, double gamma, const InnerOptions& options,
                         RngStream& rng, bool symmetric) {
  if (options.budget == 0) throw std::invalid_argument("max_phi_hat: budget must be >= 1");
  FrozenCache cache(data);
  MaxPhiResult best;
  for (int branch = 0; branch < (symmetric ? 2 : 1); ++branch) {
    ModelBundle b = bundle;
    if (branch == 1) negate_output(b.spec, b.f_params);
    const InnerReport rep = ascend_f(b, latents, data, gamma, options, rng, cache);
    const double value = full_phi_hat_f(b, latents, data, gamma, cache);
    if (branch == 0 || value > best.value) {
      best.value = value;
      best.f_params = std::move(b.f_params);
      best.report = rep;
      best.report.objective = value;
      best.flipped = branch == 1;
    }
  }
  return best;
}

double sgd_update_f(ModelBundle& bundle, const LatentTable& latents, const TransitionBatch& batch,
                    double gamma, double lr) {
  const auto g = models::backprop_grads(bundle, LossSpec{LossKind::PhiHat, gamma}, batch, {},
                                        latents, GradRequest{false, true, false, false});
  if (!all_finite(g.f)) throw DivergenceError("sgd_update_f: non-finite gradient", "");
  kernels::axpy(lr, g.f, bundle.f_params);
  return g.loss;
}

double sgd_update_q(ModelBundle& bundle, const LatentTable& latents, double lambda, double alpha,
                    const TransitionBatch& batch, const InitialBatch& initial, double gamma,
                    double lr) {
  const auto g =
      models::backprop_grads(bundle, LossSpec{LossKind::Lagrangian, gamma, lambda, alpha}, batch,
                             initial, latents, GradRequest{true, false, false, false});
  if (!all_finite(g.q)) throw DivergenceError("sgd_update_q: non-finite gradient", "");
  kernels::axpy(-lr, g.q, bundle.q_params);
  return g.loss;
}

std::vector<double> sgd_update_pi(ModelBundle& bundle, const LatentTable& latents, double lambda,
                                  double alpha, const TransitionBatch& batch,
                                  const InitialBatch& initial, double gamma, double lr) {
  auto g = models::backprop_grads(bundle, LossSpec{LossKind::Lagrangian, gamma, lambda, alpha},
                                  batch, initial, latents, GradRequest{false, false, true, true});
  if (!all_finite(g.pi) || !all_finite(g.u))
    throw DivergenceError("sgd_update_pi: non-finite gradient", "");
  kernels::axpy(lr, g.pi, bundle.pi_params);
  return std::move(g.u);
}

// ---------------------------------------------------------------- ADMM

double LatentBlocks::residual() const {
  return std::sqrt(kernels::squared_distance(u.data, w.data));
}

std::vector<std::size_t> LatentBlocks::assignment() const {
  std::vector<std::size_t> a(u.n);
  for (std::size_t i = 0; i < u.n; ++i) a[i] = nearest_centroid(u.row(i).data(), v, K, u.dim);
  return a;
}

void LatentBlocks::validate() const {
  if (K == 0) throw std::invalid_argument("LatentBlocks: K must be >= 1");
  if (u.data.size() != u.n * u.dim || w.n != u.n || w.dim != u.dim || eta.n != u.n ||
      eta.dim != u.dim || w.data.size() != u.data.size() || eta.data.size() != u.data.size() ||
      v.size() != K * u.dim)
    throw std::invalid_argument("LatentBlocks: inconsistent shapes");
}

LatentBlocks make_latent_blocks(LatentTable init, std::size_t K, RngStream& rng) {
  if (init.n < K) throw std::invalid_argument("make_latent_blocks: fewer individuals than K");
  LatentBlocks b;
  b.K = K;
  b.u = std::move(init);
  b.w = b.u;
  b.eta = LatentTable(b.u.n, b.u.dim, 0.0);
  KMeansOptions opt;
  opt.n_init = 5;
  b.v = kmeans(b.u.data, b.u.n, b.u.dim, K, rng, opt).centroids;
  return b;
}

void prox_w(std::span<const double> z, std::span<const double> v_k, double rho, double mu,
            std::span<double> w) {
  const double denom = rho + 2.0 * mu;
  for (std::size_t m = 0; m < z.size(); ++m) w[m] = (rho * z[m] + 2.0 * mu * v_k[m]) / denom;
}

double vw_block_objective(const LatentBlocks& b, double rho, double mu) {
  double quad = 0.0;
  for (std::size_t k = 0; k < b.u.data.size(); ++k) {
    const double r = b.u.data[k] - b.w.data[k] + b.eta.data[k] / rho;
    quad += r * r;
  }
  return penalty(b.w, b.v, b.K, mu) + 0.5 * rho * quad;
}

void update_vw(LatentBlocks& b, double rho, double mu, RngStream& rng) {
  if (!(rho > 0.0)) throw std::invalid_argument("update_vw: rho must be > 0");
  b.validate();
  const std::size_t n = b.n(), d = b.dim();
  std::vector<double> z(b.u.data.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = b.u.data[k] + b.eta.data[k] / rho;
  KMeansOptions opt;
  opt.n_init = 3;
  opt.warm_start = &b.v;
  const KMeansResult km = kmeans(z, n, d, b.K, rng, opt);
  b.v = km.centroids;
  for (std::size_t i = 0; i < n; ++i)
    prox_w({z.data() + i * d, d}, {b.v.data() + km.assignment[i] * d, d}, rho, mu, b.w.row(i));
}

void admm_step(LatentBlocks& blocks, const ModelBundle& bundle, double lambda, double alpha,
               const TrainingData& data, double gamma, const AdmmOptions& opt, RngStream& rng) {
  if (!(opt.rho > 0.0)) throw std::invalid_argument("admm_step: rho must be > 0");
  blocks.validate();
  const std::size_t N = blocks.n(), T = data.horizon, M = data.n_initial;
  if (N != data.n_individuals) throw std::invalid_argument("admm_step: latent rows != N");
  const std::size_t r = std::min(opt.rows_per_individual, T);
  const std::size_t p = std::min(opt.pairs_per_individual, M);
  const LossSpec spec{LossKind::Lagrangian, gamma, lambda, alpha};
  std::vector<std::size_t> rows, pairs;
  for (std::size_t step = 0; step < opt.u_steps; ++step) {
    rows.clear();
    pairs.clear();
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t t : draw(T, r, rng)) rows.push_back(i * T + t);
      for (std::size_t m : draw(M, p, rng)) pairs.push_back(i * M + m);
    }
    const TransitionBatch tb = data.rows(rows);
    const InitialBatch ib = data.pairs(pairs, (1.0 - gamma) / static_cast<double>(p));
    const auto g = models::backprop_grads(bundle, spec, tb, ib, blocks.u,
                                          GradRequest{false, false, false, true});
    for (std::size_t k = 0; k < blocks.u.data.size(); ++k) {
      const double prox = opt.rho * (blocks.u.data[k] - blocks.w.data[k]) + blocks.eta.data[k];
      blocks.u.data[k] += opt.lr_u * (g.u[k] - prox);
    }
    if (!all_finite(blocks.u.data))
      throw DivergenceError("admm_step: non-finite latent rows", "u step " + std::to_string(step));
  }
  update_vw(blocks, opt.rho, opt.mu, rng);
  for (std::size_t k = 0; k < blocks.u.data.size(); ++k)
    blocks.eta.data[k] += opt.rho * (blocks.u.data[k] - blocks.w.data[k]);
  if (!all_finite(blocks.v) || !all_finite(blocks.w.data) || !all_finite(blocks.eta.data))
    throw DivergenceError("admm_step: non-finite block", "");
}

double update_lambda(double lambda, double gap, double lr, LambdaUpdate rule) {
  const double step = rule == LambdaUpdate::Paper ? -lr * gap : lr * gap;
  return std::max(0.0, lambda + step);
}

// ----------------------------------------------------------- outer loop

models::NetworkSpec network_spec(const ExperimentConfig& config, std::size_t n_features,
                                 std::size_t n_actions, double reward_bound) {
  models::NetworkSpec s;
  s.tier = config.architecture == Architecture::Linear ? models::Tier::Linear
                                                       : models::Tier::Residual;
  s.n_features = n_features;
  s.latent_dim = config.latent_dim;
  s.hidden = s.tier == models::Tier::Residual ? config.hidden_width : 0;
  s.n_actions = n_actions;
  s.q_bound = std::max(reward_bound, 1e-3) / (1.0 - config.gamma);
  s.f_bound = config.f_bound;
  return s;
}

namespace {

std::string history_text(const std::vector<HistoryRow>& h) {
  std::ostringstream os;
  write_history_csv(os, h);
  return os.str();
}

}  // namespace

P4LResult run_p4l(const RunInputs& in, const ExperimentConfig& config, std::uint64_t seed) {
  if (!in.dataset) throw std::invalid_argument("run_p4l: no dataset");
  validate(config);
  const OfflineDataset& ds = *in.dataset;
  const std::size_t N = ds.n_individuals();
  if (in.K == 0 || in.K > N) throw std::invalid_argument("run_p4l: K must be in [1, N]");
  const double gamma = config.gamma;
  const TrainingData data = prepare_training_data(ds, in.basis, in.extra_initial);
  double r_max = 0.0;
  for (double r : data.transitions.reward) r_max = std::max(r_max, std::abs(r));

  RngStream init_rng(seed, Stream::Init);
  P4LResult res;
  res.bundle = models::make_bundle(network_spec(config, in.basis.size(), ds.n_actions(), r_max),
                                   in.basis, init_rng);
  LatentTable lat;
  if (in.initial_latents.n > 0) {
    lat = in.initial_latents;
    if (lat.n != N || lat.dim != config.latent_dim)
      throw std::invalid_argument("run_p4l: initial latents must be N x latent_dim");
  } else if (config.latent_init == LatentInit::Embedding && N > 1) {
    lat = embed_individuals(transition_distances(ds), N, config.latent_dim,
                            config.latent_init_scale);
  } else {
    lat = LatentTable(N, config.latent_dim);
    RngStream lat_rng = init_rng.fork(7);
    for (double& x : lat.data) x = config.latent_init_scale * lat_rng.normal();
  }
  RngStream cluster_rng(seed, Stream::Clustering);
  res.latents = make_latent_blocks(std::move(lat), in.K, cluster_rng);

  SolverState& st = res.state;
  st.lambda = config.lambda_init;
  st.alpha = config.resolved_alpha();
  st.mu = config.resolved_mu();
  st.rho = config.rho;
  st.lr_f = config.lr_f;
  st.lr_q = config.lr_q;
  st.lr_pi = config.lr_pi;
  st.lr_lambda = config.lr_lambda;

  InnerOptions f_opt;
  f_opt.budget = config.f_steps;
  f_opt.lr = config.lr_f;
  f_opt.minibatch = config.minibatch;
  f_opt.tol = config.inner_tol;
  f_opt.patience = config.patience;
  AdmmOptions a_opt;
  a_opt.rho = st.rho;
  a_opt.mu = st.mu;
  a_opt.lr_u = config.lr_u;
  a_opt.u_steps = config.u_steps;

  // The Q and pi steps descend/ascend the per-individual average of the
  // Lagrangian, so their rates do not scale with N.
  const double inv_n = 1.0 / static_cast<double>(N);
  const std::size_t n_rows = data.transitions.size();
  const std::size_t n_pairs = std::min(config.value_pairs_per_step, data.n_pairs());
  const double p_scale = pair_scale(data, gamma, n_pairs);

  RngStream mb_rng(seed, Stream::Minibatch);
  FrozenCache cache(data);
  std::vector<double> grad;
  double prev_value = 0.0;
  std::size_t stable = 0;
  ModelBundle& b = res.bundle;
  LatentBlocks& blk = res.latents;

  auto fail = [&](const std::string& what) {
    throw DivergenceError("run_p4l: " + what + " at outer iteration " +
                              std::to_string(st.iteration),
                          history_text(st.history));
  };

  for (std::size_t it = 1; it <= config.outer_iters; ++it) {
    st.iteration = it;
    HistoryRow row;
    row.iteration = it;
    try {
      // Step 1: f.
      // A warm start saturates f and stalls its ascent, so by default every
      // outer iteration restarts the output layer from zero.
      MaxPhiResult mf;
      if (config.f_restart == FRestart::Cold) {
        ModelBundle cold = b;
        for (std::size_t k : models::output_layer_indices(cold.spec)) cold.f_params[k] = 0.0;
        mf = max_phi_hat(cold, blk.u, data, gamma, f_opt, mb_rng, false);
      } else {
        mf = max_phi_hat(b, blk.u, data, gamma, f_opt, mb_rng, true);
      }
      b.f_params = mf.f_params;
      row.f_steps = mf.report.steps;
      row.max_phi = mf.value;

      // Step 2: Q.
      cache.reset();
      StopRule q_stop(config.inner_tol, config.patience, f_opt.check_every);
      for (std::size_t s = 0; s < config.q_steps; ++s) {
        const auto rows = draw(n_rows, config.minibatch, mb_rng);
        const auto pairs = draw(data.n_pairs(), n_pairs, mb_rng);
        const double obj = cache.q_grad(b, blk.u, gamma, st.lambda, rows, pairs, p_scale, grad);
        if (!std::isfinite(obj) || !all_finite(grad))
          throw DivergenceError("non-finite Q gradient", "");
        kernels::axpy(-config.lr_q * inv_n, grad, b.q_params);
        ++row.q_steps;
        if (q_stop.add(obj)) break;
      }

      // Step 3: pi, then the latent blocks, then lambda.
      cache.reset();
      StopRule pi_stop(config.inner_tol, config.patience, f_opt.check_every);
      for (std::size_t s = 0; s < config.pi_steps; ++s) {
        const auto rows = draw(n_rows, config.minibatch, mb_rng);
        const auto pairs = draw(data.n_pairs(), n_pairs, mb_rng);
        const double obj = cache.pi_grad(b, blk.u, gamma, st.lambda, rows, pairs, p_scale, grad);
        if (!std::isfinite(obj) || !all_finite(grad))
          throw DivergenceError("non-finite pi gradient", "");
        kernels::axpy(config.lr_pi * inv_n, grad, b.pi_params);
        ++row.pi_steps;
        if (pi_stop.add(obj)) break;
      }

      RngStream admm_rng = cluster_rng.fork(it);
      admm_step(blk, b, st.lambda, st.alpha, data, gamma, a_opt, admm_rng);
    } catch (const DivergenceError& e) {
      fail(e.what());
    }

    row.phi_hat = phi_hat(b, blk.u, data.transitions, gamma);
    row.gap = row.phi_hat - st.alpha;
    st.lambda = update_lambda(st.lambda, row.gap, st.lr_lambda, config.lambda_update);
    row.value = value_term(b, blk.u, data, gamma);
    row.lambda = st.lambda;
    row.lagrangian = row.value + st.lambda * row.gap;
    row.penalty = penalty(blk.u, blk.v, blk.K, st.mu);
    row.residual = blk.residual();
    st.history.push_back(row);
    if (!std::isfinite(row.value) || !std::isfinite(row.phi_hat) || !std::isfinite(row.penalty))
      fail("non-finite objective");

    if (it > 1) {
      const double rel = std::abs(row.value - prev_value) / std::max(std::abs(prev_value), 1e-12);
      stable = rel < config.outer_tol ? stable + 1 : 0;
    }
    prev_value = row.value;
    if (stable >= config.patience && row.residual < config.admm_tol) {
      res.converged = true;
      break;
    }
  }
  res.assignment = blk.assignment();
  return res;
}

P4LResult run_p4l(const OfflineDataset& dataset, const ExperimentConfig& config,
                  std::uint64_t seed) {
  RunInputs in;
  in.dataset = &dataset;
  RngStream rng(seed, Stream::Features);
  in.basis = fit_rbf_basis(dataset.pooled_states(), dataset.state_dim(), config.n_features, rng,
                           config.bandwidth_subsample);
  in.K = config.K;
  return run_p4l(in, config, seed);
}

void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& history) {
  std::string buf =
      "iteration,value,max_phi,phi_hat,gap,penalty,residual,lambda,lagrangian,f_steps,q_steps,pi_steps\n";
  for (const HistoryRow& r : history) {
    buf += std::to_string(r.iteration);
    for (double x : {r.value, r.max_phi, r.phi_hat, r.gap, r.penalty, r.residual, r.lambda, r.lagrangian}) {
      buf += ',';
      text::append_real(buf, x);
    }
    for (std::size_t n : {r.f_steps, r.q_steps, r.pi_steps}) buf += ',' + std::to_string(n);
    buf += '\n';
  }
  os << buf;
}

void write_result(std::ostream& os, const P4LResult& r) {
  models::write_bundle(os, r.bundle);
  const LatentBlocks& b = r.latents;
  std::string buf = "latents " + std::to_string(b.n()) + " " + std::to_string(b.dim()) + " " +
                    std::to_string(b.K) + "\n";
  text::write_block(buf, "u", b.u.data);
  text::write_block(buf, "v", b.v);
  text::write_block(buf, "w", b.w.data);
  text::write_block(buf, "eta", b.eta.data);
  buf += "lambda ";
  text::append_real(buf, r.state.lambda);
  buf += '\n';
  os << buf;
}

P4LResult read_result(std::istream& is) {
  std::size_t line = 0;
  P4LResult r;
  r.bundle = models::read_bundle(is, line);
  std::string l;
  if (!std::getline(is, l)) throw ParseError("missing latents header", line + 1);
  ++line;
  const auto f = text::split(text::trim(l), ' ');
  if (f.size() != 4 || f[0] != "latents") throw ParseError("expected 'latents N d K'", line);
  const auto n = text::parse_int<std::size_t>(f[1], line);
  const auto d = text::parse_int<std::size_t>(f[2], line);
  LatentBlocks& b = r.latents;
  b.K = text::parse_int<std::size_t>(f[3], line);
  auto table = [&](const char* tag) {
    LatentTable t(n, d);
    t.data = text::read_block(is, line, tag);
    return t;
  };
  b.u = table("u");
  b.v = text::read_block(is, line, "v");
  b.w = table("w");
  b.eta = table("eta");
  if (!std::getline(is, l)) throw ParseError("missing lambda", line + 1);
  ++line;
  const auto g = text::split(text::trim(l), ' ');
  if (g.size() != 2 || g[0] != "lambda") throw ParseError("expected 'lambda <value>'", line);
  r.state.lambda = text::parse_real(g[1], line);
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  if (b.dim() != r.bundle.spec.latent_dim)
    throw SchemaError("latent dimension disagrees with the network spec");
  r.assignment = b.assignment();
  return r;
}

}  // namespace p4l::solver
