#include "p4l/models/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "p4l/core/error.hpp"
#include "p4l/core/text.hpp"
#include "p4l/kernels.hpp"

namespace p4l::models {

std::string tier_name(Tier t) { return t == Tier::Linear ? "linear" : "residual"; }

Tier parse_tier(const std::string& name) {
  if (name == "linear") return Tier::Linear;
  if (name == "residual") return Tier::Residual;
  throw std::invalid_argument("unknown network tier '" + name + "'");
}

void validate(const NetworkSpec& s) {
  if (s.n_features < 1) throw std::invalid_argument("network spec: n_features must be >= 1");
  if (s.n_actions < 1) throw std::invalid_argument("network spec: n_actions must be >= 1");
  if (!(s.q_bound > 0.0) || !(s.f_bound > 0.0))
    throw std::invalid_argument("network spec: output bounds must be positive");
  if (s.tier == Tier::Residual && s.hidden < s.input_dim())
    throw std::invalid_argument("network spec: hidden width must cover the residual input");
}

namespace {

std::size_t linear_width(const NetworkSpec& s) { return (s.n_features + 1) * (s.latent_dim + 1); }

struct ResidualLayout {
  std::size_t w1, b1, w2, b2, wo, bo, total;
};

ResidualLayout residual_layout(const NetworkSpec& s) {
  const std::size_t d0 = s.input_dim();
  const std::size_t h = s.hidden;
  ResidualLayout l{};
  l.w1 = 0;
  l.b1 = l.w1 + h * d0;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + h * h;
  l.wo = l.b2 + h;
  l.bo = l.wo + s.n_actions * h;
  l.total = l.bo + s.n_actions;
  return l;
}

}  // namespace

std::size_t param_count(const NetworkSpec& s) {
  return s.tier == Tier::Linear ? s.n_actions * linear_width(s) : residual_layout(s).total;
}

std::size_t linear_index(const NetworkSpec& s, std::size_t a, std::size_t j, std::size_t m) {
  return a * linear_width(s) + j * (s.latent_dim + 1) + m;
}

double squash(double z, double bound) noexcept {
  const double half = 0.5 * bound;
  const double mag = std::abs(z);
  if (mag <= half) return z;
  const double out = half + half * std::tanh((mag - half) / half);
  return z < 0.0 ? -out : out;
}

double squash_derivative(double z, double bound) noexcept {
  const double half = 0.5 * bound;
  const double mag = std::abs(z);
  if (mag <= half) return 1.0;
  const double t = std::tanh((mag - half) / half);
  return 1.0 - t * t;
}

void softmax(std::span<const double> logits, std::span<double> probs) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    probs[a] = std::exp(logits[a] - m);
    sum += probs[a];
  }
  for (double& p : probs) p /= sum;
}

void forward(const NetworkSpec& s, std::span<const double> params, std::span<const double> phi,
             std::span<const double> u, Workspace& ws) {
  if (phi.size() != s.n_features || u.size() != s.latent_dim)
    throw std::invalid_argument("network forward: input dimension mismatch");
  const std::size_t A = s.n_actions;
  ws.raw.resize(A);
  if (s.tier == Tier::Linear) {
    const std::size_t du1 = s.latent_dim + 1;
    ws.x.resize(linear_width(s));
    for (std::size_t j = 0; j <= s.n_features; ++j) {
      const double pj = j < s.n_features ? phi[j] : 1.0;
      double* row = ws.x.data() + j * du1;
      row[0] = pj;
      for (std::size_t m = 0; m < s.latent_dim; ++m) row[m + 1] = pj * u[m];
    }
    kernels::gemv(params, A, ws.x.size(), ws.x, ws.raw);
    return;
  }
  const ResidualLayout l = residual_layout(s);
  const std::size_t d0 = s.input_dim();
  const std::size_t h = s.hidden;
  ws.x.resize(d0);
  std::copy(phi.begin(), phi.end(), ws.x.begin());
  std::copy(u.begin(), u.end(), ws.x.begin() + static_cast<std::ptrdiff_t>(s.n_features));
  ws.pre1.resize(h);
  ws.h1.resize(h);
  ws.pre2.resize(h);
  ws.h2.resize(h);
  kernels::gemv(params.subspan(l.w1, h * d0), h, d0, ws.x, ws.pre1);
  for (std::size_t k = 0; k < h; ++k) {
    ws.pre1[k] += params[l.b1 + k];
    ws.h1[k] = ws.pre1[k] > 0.0 ? ws.pre1[k] : 0.0;
  }
  kernels::gemv(params.subspan(l.w2, h * h), h, h, ws.h1, ws.pre2);
  for (std::size_t k = 0; k < h; ++k) {
    ws.pre2[k] += params[l.b2 + k];
    ws.h2[k] = (ws.pre2[k] > 0.0 ? ws.pre2[k] : 0.0) + (k < d0 ? ws.x[k] : 0.0);
  }
  kernels::gemv(params.subspan(l.wo, A * h), A, h, ws.h2, ws.raw);
  for (std::size_t a = 0; a < A; ++a) ws.raw[a] += params[l.bo + a];
}

void backward(const NetworkSpec& s, std::span<const double> params, const Workspace& ws,
              std::span<const double> d_raw, std::span<double> grad_params,
              std::span<double> grad_u) {
  const std::size_t A = s.n_actions;
  const bool want_u = !grad_u.empty();
  if (want_u && grad_u.size() != s.latent_dim)
    throw std::invalid_argument("network backward: latent gradient size mismatch");
  if (s.tier == Tier::Linear) {
    const std::size_t width = linear_width(s);
    const std::size_t du1 = s.latent_dim + 1;
    for (std::size_t a = 0; a < A; ++a) {
      if (d_raw[a] == 0.0) continue;
      kernels::axpy(d_raw[a], ws.x, grad_params.subspan(a * width, width));
      if (!want_u) continue;
      // d raw_a / d u_m = sum_j W_a[j, m + 1] * phi~_j, with phi~_j = x[j, 0].
      const double* w = params.data() + a * width;
      for (std::size_t j = 0; j <= s.n_features; ++j) {
        const double pj = ws.x[j * du1];
        if (pj == 0.0) continue;
        const double c = d_raw[a] * pj;
        for (std::size_t m = 0; m < s.latent_dim; ++m) grad_u[m] += c * w[j * du1 + m + 1];
      }
    }
    return;
  }
  const ResidualLayout l = residual_layout(s);
  const std::size_t d0 = s.input_dim();
  const std::size_t h = s.hidden;
  // Output layer.
  kernels::ger(1.0, d_raw, ws.h2, grad_params.subspan(l.wo, A * h));
  for (std::size_t a = 0; a < A; ++a) grad_params[l.bo + a] += d_raw[a];
  double dh2_buf[256];
  std::vector<double> dh2_vec;
  double* dh2 = dh2_buf;
  if (3 * h > 256) {
    dh2_vec.resize(3 * h);
    dh2 = dh2_vec.data();
  }
  double* dpre2 = dh2 + h;
  double* dpre1 = dpre2 + h;
  std::fill(dh2, dh2 + h, 0.0);
  kernels::gemv_t_acc(params.subspan(l.wo, A * h), A, h, d_raw, {dh2, h});
  // Second layer; the shortcut passes dh2 straight to x0.
  for (std::size_t k = 0; k < h; ++k) dpre2[k] = ws.pre2[k] > 0.0 ? dh2[k] : 0.0;
  kernels::ger(1.0, {dpre2, h}, ws.h1, grad_params.subspan(l.w2, h * h));
  for (std::size_t k = 0; k < h; ++k) grad_params[l.b2 + k] += dpre2[k];
  std::fill(dpre1, dpre1 + h, 0.0);
  kernels::gemv_t_acc(params.subspan(l.w2, h * h), h, h, {dpre2, h}, {dpre1, h});
  for (std::size_t k = 0; k < h; ++k)
    if (!(ws.pre1[k] > 0.0)) dpre1[k] = 0.0;
  kernels::ger(1.0, {dpre1, h}, ws.x, grad_params.subspan(l.w1, h * d0));
  for (std::size_t k = 0; k < h; ++k) grad_params[l.b1 + k] += dpre1[k];
  if (!want_u) return;
  // Latent part of x0: first-layer path plus the shortcut.
  for (std::size_t m = 0; m < s.latent_dim; ++m) {
    const std::size_t col = s.n_features + m;
    double g = dh2[col];
    for (std::size_t k = 0; k < h; ++k) g += params[l.w1 + k * d0 + col] * dpre1[k];
    grad_u[m] += g;
  }
}

std::vector<double> init_params(const NetworkSpec& s, RngStream& rng) {
  validate(s);
  std::vector<double> p(param_count(s));
  if (s.tier == Tier::Linear) {
    const double r = 1.0 / std::sqrt(static_cast<double>(linear_width(s)));
    for (double& v : p) v = rng.uniform(-r, r);
    return p;
  }
  const ResidualLayout l = residual_layout(s);
  const double r1 = 1.0 / std::sqrt(static_cast<double>(s.input_dim()));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(s.hidden));
  for (std::size_t k = l.w1; k < l.w2; ++k) p[k] = rng.uniform(-r1, r1);
  for (std::size_t k = l.w2; k < l.total; ++k) p[k] = rng.uniform(-r2, r2);
  return p;
}

std::vector<std::size_t> output_layer_indices(const NetworkSpec& s) {
  std::vector<std::size_t> idx;
  if (s.tier == Tier::Linear) {
    for (std::size_t k = 0; k < param_count(s); ++k) idx.push_back(k);
    return idx;
  }
  const ResidualLayout l = residual_layout(s);
  for (std::size_t k = l.wo; k < l.total; ++k) idx.push_back(k);
  return idx;
}

std::vector<double>& ModelBundle::params(Family fam) {
  return fam == Family::Q ? q_params : fam == Family::F ? f_params : pi_params;
}

const std::vector<double>& ModelBundle::params(Family fam) const {
  return fam == Family::Q ? q_params : fam == Family::F ? f_params : pi_params;
}

ModelBundle make_bundle(const NetworkSpec& spec, RbfBasis basis, RngStream& rng) {
  validate(spec);
  if (basis.n_centers != spec.n_features)
    throw std::invalid_argument("make_bundle: basis size differs from n_features");
  ModelBundle b{spec, std::move(basis), {}, {}, {}};
  b.q_params = init_params(spec, rng);
  b.f_params = init_params(spec, rng);
  b.pi_params = init_params(spec, rng);
  return b;
}

ModelBundle zero_bundle(const NetworkSpec& spec, RbfBasis basis) {
  validate(spec);
  const std::size_t n = param_count(spec);
  return ModelBundle{spec, std::move(basis), std::vector<double>(n, 0.0),
                     std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

void validate(const ModelBundle& b) {
  validate(b.spec);
  validate(b.basis);
  if (b.basis.n_centers != b.spec.n_features)
    throw std::invalid_argument("model bundle: basis size differs from n_features");
  const std::size_t n = param_count(b.spec);
  if (b.q_params.size() != n || b.f_params.size() != n || b.pi_params.size() != n)
    throw std::invalid_argument("model bundle: parameter length does not match spec");
}

namespace {

void check_action(const NetworkSpec& s, int a) {
  if (a < 0 || static_cast<std::size_t>(a) >= s.n_actions)
    throw std::invalid_argument("invalid action index");
}

}  // namespace

double q_value_phi(const ModelBundle& b, std::span<const double> phi, int a,
                   std::span<const double> u, Workspace& ws) {
  check_action(b.spec, a);
  forward(b.spec, b.q_params, phi, u, ws);
  return squash(ws.raw[static_cast<std::size_t>(a)], b.spec.q_bound);
}

double f_value_phi(const ModelBundle& b, std::span<const double> phi, int a,
                   std::span<const double> u, Workspace& ws) {
  check_action(b.spec, a);
  forward(b.spec, b.f_params, phi, u, ws);
  return squash(ws.raw[static_cast<std::size_t>(a)], b.spec.f_bound);
}

void policy_probs_phi(const ModelBundle& b, std::span<const double> phi,
                      std::span<const double> u, Workspace& ws, std::span<double> probs) {
  forward(b.spec, b.pi_params, phi, u, ws);
  softmax(ws.raw, probs);
}

double q_value(const ModelBundle& b, std::span<const double> s, int a,
               std::span<const double> u) {
  Workspace ws;
  return q_value_phi(b, featurize(b.basis, s), a, u, ws);
}

double f_value(const ModelBundle& b, std::span<const double> s, int a,
               std::span<const double> u) {
  Workspace ws;
  return f_value_phi(b, featurize(b.basis, s), a, u, ws);
}

std::vector<double> policy_probs(const ModelBundle& b, std::span<const double> s,
                                 std::span<const double> u) {
  Workspace ws;
  std::vector<double> p(b.spec.n_actions);
  policy_probs_phi(b, featurize(b.basis, s), u, ws, p);
  return p;
}

void write_bundle(std::ostream& os, const ModelBundle& b) {
  const auto& s = b.spec;
  std::string buf = "spec " + tier_name(s.tier) + " " + std::to_string(s.n_features) + " " +
                    std::to_string(s.latent_dim) + " " + std::to_string(s.hidden) + " " +
                    std::to_string(s.n_actions) + " ";
  text::append_real(buf, s.q_bound);
  buf += ' ';
  text::append_real(buf, s.f_bound);
  buf += '\n';
  os << buf;
  write_basis(os, b.basis);
  buf.clear();
  text::write_block(buf, "q", b.q_params);
  text::write_block(buf, "f", b.f_params);
  text::write_block(buf, "pi", b.pi_params);
  os << buf;
}

ModelBundle read_bundle(std::istream& is, std::size_t& line) {
  std::string l;
  if (!std::getline(is, l)) throw ParseError("missing network spec", line + 1);
  ++line;
  const auto f = text::split(text::trim(l), ' ');
  if (f.size() != 8 || f[0] != "spec") throw ParseError("malformed network spec", line);
  ModelBundle b;
  try {
    b.spec.tier = parse_tier(std::string(f[1]));
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), line);
  }
  b.spec.n_features = text::parse_int<std::size_t>(f[2], line);
  b.spec.latent_dim = text::parse_int<std::size_t>(f[3], line);
  b.spec.hidden = text::parse_int<std::size_t>(f[4], line);
  b.spec.n_actions = text::parse_int<std::size_t>(f[5], line);
  b.spec.q_bound = text::parse_real(f[6], line);
  b.spec.f_bound = text::parse_real(f[7], line);
  b.basis = read_basis(is, line);
  b.q_params = text::read_block(is, line, "q");
  b.f_params = text::read_block(is, line, "f");
  b.pi_params = text::read_block(is, line, "pi");
  try {
    validate(b);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return b;
}

}  // namespace p4l::models
