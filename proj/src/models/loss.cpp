#include "p4l/models/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace p4l::models {

void TransitionBatch::push(std::span<const double> ph, int a, double r,
                           std::span<const double> ph_next, std::size_t i) {
  phi.insert(phi.end(), ph.begin(), ph.end());
  phi_next.insert(phi_next.end(), ph_next.begin(), ph_next.end());
  action.push_back(a);
  reward.push_back(r);
  individual.push_back(i);
}

void InitialBatch::push(std::span<const double> ph, std::size_t i) {
  phi.insert(phi.end(), ph.begin(), ph.end());
  individual.push_back(i);
}

namespace {

struct Engine {
  const ModelBundle& b;
  const LatentTable& lat;
  const GradRequest& req;
  Gradients* g;                // null for value-only evaluation
  std::vector<char>* signs;    // collects ReLU activation patterns when set
  Workspace ws_q, ws_qn, ws_pi, ws_f;
  std::vector<double> d_raw, probs, qn, dp;

  Engine(const ModelBundle& bundle, const LatentTable& latents, const GradRequest& request,
         Gradients* grads, std::vector<char>* sign_out)
      : b(bundle), lat(latents), req(request), g(grads), signs(sign_out) {
    const std::size_t A = b.spec.n_actions;
    d_raw.resize(A);
    probs.resize(A);
    qn.resize(A);
    dp.resize(A);
  }

  void record(const Workspace& ws) {
    if (!signs || b.spec.tier != Tier::Residual) return;
    for (double z : ws.pre1) signs->push_back(z > 0.0);
    for (double z : ws.pre2) signs->push_back(z > 0.0);
  }

  std::span<double> u_grad(std::size_t i) {
    if (!g || !req.u || lat.dim == 0) return {};
    return {g->u.data() + i * lat.dim, lat.dim};
  }

  std::vector<double> scratch;

  void fwd(Family fam, std::span<const double> phi, std::span<const double> u, Workspace& ws) {
    forward(b.spec, b.params(fam), phi, u, ws);
    record(ws);
  }

  void bwd(Family fam, const Workspace& ws, std::size_t i) {
    if (!g) return;
    const bool want_p = fam == Family::Q ? req.q : fam == Family::F ? req.f : req.pi;
    std::vector<double>& gp = fam == Family::Q ? g->q : fam == Family::F ? g->f : g->pi;
    if (!want_p && !req.u) return;
    // Parameter gradients are always accumulated (into a scratch vector when
    // not requested) so that the latent path is computed by the same code.
    if (want_p) {
      backward(b.spec, b.params(fam), ws, d_raw, gp, u_grad(i));
    } else {
      scratch.assign(b.params(fam).size(), 0.0);
      backward(b.spec, b.params(fam), ws, d_raw, scratch, u_grad(i));
    }
  }

  /// Softmax backward: d logits from d probs.
  void softmax_back() {
    double dot = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) dot += probs[a] * dp[a];
    for (std::size_t a = 0; a < probs.size(); ++a) d_raw[a] = probs[a] * (dp[a] - dot);
  }

  double phi_hat(const TransitionBatch& tb, double gamma, double weight) {
    const std::size_t n = tb.size();
    const double c = weight / static_cast<double>(n);
    const double qb = b.spec.q_bound;
    const double fb = b.spec.f_bound;
    const std::size_t A = b.spec.n_actions;
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = tb.individual[k];
      const auto u = lat.row(i);
      const auto a = static_cast<std::size_t>(tb.action[k]);
      fwd(Family::Q, tb.phi_row(k), u, ws_q);
      fwd(Family::Q, tb.next_row(k), u, ws_qn);
      fwd(Family::Pi, tb.next_row(k), u, ws_pi);
      fwd(Family::F, tb.phi_row(k), u, ws_f);
      softmax(ws_pi.raw, probs);
      double next = 0.0;
      for (std::size_t a2 = 0; a2 < A; ++a2) {
        qn[a2] = squash(ws_qn.raw[a2], qb);
        next += probs[a2] * qn[a2];
      }
      const double q_sa = squash(ws_q.raw[a], qb);
      const double f_sa = squash(ws_f.raw[a], fb);
      const double delta = tb.reward[k] + gamma * next - q_sa;
      total += f_sa * delta;
      if (!g) continue;
      std::fill(d_raw.begin(), d_raw.end(), 0.0);
      d_raw[a] = c * delta * squash_derivative(ws_f.raw[a], fb);
      bwd(Family::F, ws_f, i);
      std::fill(d_raw.begin(), d_raw.end(), 0.0);
      d_raw[a] = -c * f_sa * squash_derivative(ws_q.raw[a], qb);
      bwd(Family::Q, ws_q, i);
      for (std::size_t a2 = 0; a2 < A; ++a2)
        d_raw[a2] = c * f_sa * gamma * probs[a2] * squash_derivative(ws_qn.raw[a2], qb);
      bwd(Family::Q, ws_qn, i);
      for (std::size_t a2 = 0; a2 < A; ++a2) dp[a2] = c * f_sa * gamma * qn[a2];
      softmax_back();
      bwd(Family::Pi, ws_pi, i);
    }
    return weight * total / static_cast<double>(n);
  }

  double value_term(const InitialBatch& ib) {
    const double qb = b.spec.q_bound;
    const std::size_t A = b.spec.n_actions;
    double total = 0.0;
    for (std::size_t k = 0; k < ib.size(); ++k) {
      const std::size_t i = ib.individual[k];
      const auto u = lat.row(i);
      fwd(Family::Q, ib.phi_row(k), u, ws_q);
      fwd(Family::Pi, ib.phi_row(k), u, ws_pi);
      softmax(ws_pi.raw, probs);
      double v = 0.0;
      for (std::size_t a = 0; a < A; ++a) {
        qn[a] = squash(ws_q.raw[a], qb);
        v += probs[a] * qn[a];
      }
      total += v;
      if (!g) continue;
      for (std::size_t a = 0; a < A; ++a)
        d_raw[a] = ib.scale * probs[a] * squash_derivative(ws_q.raw[a], qb);
      bwd(Family::Q, ws_q, i);
      for (std::size_t a = 0; a < A; ++a) dp[a] = ib.scale * qn[a];
      softmax_back();
      bwd(Family::Pi, ws_pi, i);
    }
    return ib.scale * total;
  }

  double node_sum(const TransitionBatch& tb, LossKind kind) {
    double total = 0.0;
    for (std::size_t k = 0; k < tb.size(); ++k) {
      const std::size_t i = tb.individual[k];
      const auto u = lat.row(i);
      const auto a = static_cast<std::size_t>(tb.action[k]);
      std::fill(d_raw.begin(), d_raw.end(), 0.0);
      if (kind == LossKind::QValue || kind == LossKind::FValue) {
        const Family fam = kind == LossKind::QValue ? Family::Q : Family::F;
        const double bound = fam == Family::Q ? b.spec.q_bound : b.spec.f_bound;
        fwd(fam, tb.phi_row(k), u, ws_q);
        total += squash(ws_q.raw[a], bound);
        if (!g) continue;
        d_raw[a] = squash_derivative(ws_q.raw[a], bound);
        bwd(fam, ws_q, i);
      } else {
        fwd(Family::Pi, tb.phi_row(k), u, ws_pi);
        softmax(ws_pi.raw, probs);
        total += probs[a];
        if (!g) continue;
        std::fill(dp.begin(), dp.end(), 0.0);
        dp[a] = 1.0;
        softmax_back();
        bwd(Family::Pi, ws_pi, i);
      }
    }
    return total;
  }
};

void check_shapes(const ModelBundle& b, const TransitionBatch& tb, const InitialBatch& ib,
                  const LatentTable& lat) {
  const std::size_t J = b.spec.n_features;
  if (lat.dim != b.spec.latent_dim || lat.data.size() != lat.n * lat.dim)
    throw std::invalid_argument("backprop_grads: latent table shape mismatch");
  const std::size_t n = tb.size();
  if (n > 0 && (tb.n_features != J || tb.phi.size() != n * J || tb.phi_next.size() != n * J ||
                tb.reward.size() != n || tb.individual.size() != n))
    throw std::invalid_argument("backprop_grads: transition batch shape mismatch");
  for (std::size_t k = 0; k < n; ++k) {
    if (tb.individual[k] >= lat.n)
      throw std::invalid_argument("backprop_grads: individual index out of range");
    if (tb.action[k] < 0 || static_cast<std::size_t>(tb.action[k]) >= b.spec.n_actions)
      throw std::invalid_argument("backprop_grads: action index out of range");
  }
  if (ib.size() > 0 && (ib.n_features != J || ib.phi.size() != ib.size() * J))
    throw std::invalid_argument("backprop_grads: initial batch shape mismatch");
  for (std::size_t i : ib.individual)
    if (i >= lat.n) throw std::invalid_argument("backprop_grads: individual index out of range");
}

double run(const ModelBundle& b, const LossSpec& spec, const TransitionBatch& tb,
           const InitialBatch& ib, const LatentTable& lat, const GradRequest& req,
           Gradients* g, std::vector<char>* signs) {
  check_shapes(b, tb, ib, lat);
  Engine e(b, lat, req, g, signs);
  auto need_transitions = [&] {
    if (tb.size() == 0) throw std::invalid_argument("backprop_grads: empty transition batch");
  };
  switch (spec.kind) {
    case LossKind::Constant:
      return spec.constant;
    case LossKind::QValue:
    case LossKind::FValue:
    case LossKind::PolicyProb:
      need_transitions();
      return e.node_sum(tb, spec.kind);
    case LossKind::PolicyVector:
      throw std::invalid_argument("backprop_grads: loss is not a scalar (policy vector)");
    case LossKind::PhiHat:
      need_transitions();
      return e.phi_hat(tb, spec.gamma, 1.0);
    case LossKind::ValueTerm:
      if (ib.size() == 0) throw std::invalid_argument("backprop_grads: empty initial batch");
      return e.value_term(ib);
    case LossKind::Lagrangian: {
      if (spec.lambda < 0.0) throw std::invalid_argument("backprop_grads: negative lambda");
      if (ib.size() == 0) throw std::invalid_argument("backprop_grads: empty initial batch");
      need_transitions();
      const double v = e.value_term(ib);
      return v + e.phi_hat(tb, spec.gamma, spec.lambda) - spec.lambda * spec.alpha;
    }
  }
  throw std::invalid_argument("backprop_grads: unknown loss kind");
}

}  // namespace

Gradients backprop_grads(const ModelBundle& b, const LossSpec& spec, const TransitionBatch& tb,
                         const InitialBatch& ib, const LatentTable& lat,
                         const GradRequest& req) {
  Gradients g;
  const std::size_t n = param_count(b.spec);
  if (req.q) g.q.assign(n, 0.0);
  if (req.f) g.f.assign(n, 0.0);
  if (req.pi) g.pi.assign(n, 0.0);
  if (req.u) g.u.assign(lat.n * lat.dim, 0.0);
  g.loss = run(b, spec, tb, ib, lat, req, &g, nullptr);
  return g;
}

double evaluate_loss(const ModelBundle& b, const LossSpec& spec, const TransitionBatch& tb,
                     const InitialBatch& ib, const LatentTable& lat) {
  return run(b, spec, tb, ib, lat, GradRequest{}, nullptr, nullptr);
}

bool near_kink(const ModelBundle& b, const TransitionBatch& tb, const InitialBatch& ib,
               const LatentTable& lat, double margin) {
  if (b.spec.tier != Tier::Residual) return false;
  Workspace ws;
  auto check = [&](Family fam, std::span<const double> phi, std::span<const double> u) {
    forward(b.spec, b.params(fam), phi, u, ws);
    for (double z : ws.pre1)
      if (std::abs(z) < margin) return true;
    for (double z : ws.pre2)
      if (std::abs(z) < margin) return true;
    return false;
  };
  for (std::size_t k = 0; k < tb.size(); ++k) {
    const auto u = lat.row(tb.individual[k]);
    for (Family fam : {Family::Q, Family::F, Family::Pi})
      if (check(fam, tb.phi_row(k), u) || check(fam, tb.next_row(k), u)) return true;
  }
  for (std::size_t k = 0; k < ib.size(); ++k) {
    const auto u = lat.row(ib.individual[k]);
    for (Family fam : {Family::Q, Family::Pi})
      if (check(fam, ib.phi_row(k), u)) return true;
  }
  return false;
}

FiniteDiffReport finite_diff_check(const ModelBundle& bundle, const LossSpec& spec,
                                   const TransitionBatch& tb, const InitialBatch& ib,
                                   const LatentTable& latents, CheckTarget target,
                                   double tolerance, RngStream& rng, std::size_t n_coords,
                                   bool corrupt) {
  FiniteDiffReport rep;
  GradRequest req{target == CheckTarget::QParams, target == CheckTarget::FParams,
                  target == CheckTarget::PiParams, target == CheckTarget::Latents};
  Gradients g = backprop_grads(bundle, spec, tb, ib, latents, req);
  std::vector<double>& analytic = target == CheckTarget::QParams   ? g.q
                                  : target == CheckTarget::FParams ? g.f
                                  : target == CheckTarget::PiParams ? g.pi
                                                                    : g.u;
  if (corrupt)
    for (std::size_t k = 0; k < analytic.size(); ++k)
      analytic[k] = analytic[k] * 1.1 + (k % 2 ? 1e-3 : -1e-3);

  ModelBundle b = bundle;
  LatentTable lat = latents;
  auto coord = [&](std::size_t k) -> double& {
    switch (target) {
      case CheckTarget::QParams: return b.q_params[k];
      case CheckTarget::FParams: return b.f_params[k];
      case CheckTarget::PiParams: return b.pi_params[k];
      case CheckTarget::Latents: break;
    }
    return lat.data[k];
  };
  // Latent coordinates of individuals absent from both batches have a zero
  // gradient by construction; restrict the draw to touched rows.
  std::vector<std::size_t> candidates;
  if (target == CheckTarget::Latents) {
    std::vector<char> touched(lat.n, 0);
    for (std::size_t i : tb.individual) touched[i] = 1;
    for (std::size_t i : ib.individual) touched[i] = 1;
    for (std::size_t i = 0; i < lat.n; ++i)
      if (touched[i])
        for (std::size_t m = 0; m < lat.dim; ++m) candidates.push_back(i * lat.dim + m);
  } else {
    candidates.resize(analytic.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) candidates[k] = k;
  }
  if (candidates.empty()) {
    rep.pass = true;
    return rep;
  }
  const std::size_t want = std::min(n_coords, candidates.size());
  std::size_t attempts = 0;
  while (rep.n_checked < want && attempts < 20 * want + 20) {
    ++attempts;
    const std::size_t k = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
    double& x = coord(k);
    const double x0 = x;
    const double h = 1e-5 * std::max(1.0, std::abs(x0));
    std::vector<char> s_plus, s_minus;
    x = x0 + h;
    const double lp = run(b, spec, tb, ib, lat, req, nullptr, &s_plus);
    x = x0 - h;
    const double lm = run(b, spec, tb, ib, lat, req, nullptr, &s_minus);
    x = x0;
    if (s_plus != s_minus) {
      ++rep.n_resampled;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * h);
    const double a = analytic[k];
    const double scale = std::max({std::abs(a), std::abs(numeric), 1e-4});
    rep.max_rel_error = std::max(rep.max_rel_error, std::abs(a - numeric) / scale);
    ++rep.n_checked;
  }
  rep.pass = rep.n_checked > 0 && rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace p4l::models
