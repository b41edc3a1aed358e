#pragma once

// Latent-conditioned Q, ratio (f) and softmax-policy families.
//
// Every family maps (phi(s), u) to one raw output per action.
//   Linear tier:    x = [phi; 1] (x) [1; u],  raw_a = W_a . x
//   Residual tier:  x0 = [phi; u]
//                   h1 = relu(W1 x0 + b1)
//                   h2 = relu(W2 h1 + b2) + pad(x0)
//                   raw = Wo h2 + bo
// Q and f squash the raw output with an odd bounded map; the policy applies
// a softmax over actions.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "p4l/core/rng.hpp"
#include "p4l/features/rbf.hpp"

namespace p4l::models {

enum class Tier { Linear, Residual };
enum class Family { Q, F, Pi };

std::string tier_name(Tier t);
Tier parse_tier(const std::string& name);

struct NetworkSpec {
  Tier tier = Tier::Linear;
  std::size_t n_features = 0;
  std::size_t latent_dim = 0;
  std::size_t hidden = 0;
  std::size_t n_actions = 2;
  double q_bound = 1.0;
  double f_bound = 2.0;

  std::size_t input_dim() const noexcept { return n_features + latent_dim; }
  bool operator==(const NetworkSpec&) const = default;
};

/// Throws std::invalid_argument on inconsistent sizes or bounds.
void validate(const NetworkSpec& spec);

std::size_t param_count(const NetworkSpec& spec);

/// Odd squash with range (-B, B): identity on |z| <= B/2, then a tanh
/// shoulder that is C^1 at the joint.
double squash(double z, double bound) noexcept;
double squash_derivative(double z, double bound) noexcept;

/// Numerically stable softmax of `logits` into `probs`.
void softmax(std::span<const double> logits, std::span<double> probs);

/// Per-evaluation scratch kept for the backward pass.
struct Workspace {
  std::vector<double> x;     // linear tier input, or x0 for the residual tier
  std::vector<double> pre1;  // residual tier pre-activations
  std::vector<double> h1;
  std::vector<double> pre2;
  std::vector<double> h2;
  std::vector<double> raw;  // one per action
};

/// Raw outputs for one input; leaves what backward needs in `ws`.
void forward(const NetworkSpec& spec, std::span<const double> params,
             std::span<const double> phi, std::span<const double> u, Workspace& ws);

/// Accumulates d loss / d params into grad_params and, when grad_u is
/// non-empty, d loss / d u into grad_u, given d loss / d raw.
void backward(const NetworkSpec& spec, std::span<const double> params, const Workspace& ws,
              std::span<const double> d_raw, std::span<double> grad_params,
              std::span<double> grad_u);

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
std::vector<double> init_params(const NetworkSpec& spec, RngStream& rng);

/// Indices of the final-layer parameters (W_a rows for the linear tier,
/// Wo and bo for the residual tier). Negating them negates the raw output.
std::vector<std::size_t> output_layer_indices(const NetworkSpec& spec);

/// Index of the weight that multiplies feature j with latent component m
/// (m = 0 is the constant) for action a in the linear tier. j == n_features
/// addresses the constant feature.
std::size_t linear_index(const NetworkSpec& spec, std::size_t a, std::size_t j, std::size_t m);

/// Parameter stores for the three families plus the shared basis.
struct ModelBundle {
  NetworkSpec spec;
  RbfBasis basis;
  std::vector<double> q_params;
  std::vector<double> f_params;
  std::vector<double> pi_params;

  std::vector<double>& params(Family fam);
  const std::vector<double>& params(Family fam) const;
  bool operator==(const ModelBundle&) const = default;
};

ModelBundle make_bundle(const NetworkSpec& spec, RbfBasis basis, RngStream& rng);
ModelBundle zero_bundle(const NetworkSpec& spec, RbfBasis basis);

/// Throws std::invalid_argument when parameter lengths disagree with the spec.
void validate(const ModelBundle& bundle);

double q_value(const ModelBundle& bundle, std::span<const double> s, int a,
               std::span<const double> u);
double f_value(const ModelBundle& bundle, std::span<const double> s, int a,
               std::span<const double> u);
std::vector<double> policy_probs(const ModelBundle& bundle, std::span<const double> s,
                                 std::span<const double> u);

/// Same quantities from precomputed features.
double q_value_phi(const ModelBundle& bundle, std::span<const double> phi, int a,
                   std::span<const double> u, Workspace& ws);
double f_value_phi(const ModelBundle& bundle, std::span<const double> phi, int a,
                   std::span<const double> u, Workspace& ws);
void policy_probs_phi(const ModelBundle& bundle, std::span<const double> phi,
                      std::span<const double> u, Workspace& ws, std::span<double> probs);

/// Text checkpoint: spec, basis and the three parameter vectors. Reals use
/// shortest round-trip form, so save/load is bit-exact.
void write_bundle(std::ostream& os, const ModelBundle& bundle);
ModelBundle read_bundle(std::istream& is, std::size_t& line);

}  // namespace p4l::models
