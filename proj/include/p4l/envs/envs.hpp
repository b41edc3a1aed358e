#pragma once

// Heterogeneous environment suite. Stepping is stateless: everything an
// environment needs lives in its params and the EnvState passed in.

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "p4l/core/rng.hpp"

namespace p4l::envs {

/// Two-dimensional linear-Gaussian environment with logistic reward.
/// Transition:
///   s1' = 0.8 (2A - 1) s1 + c1 s2 + e1
///   s2' = c2 s1 + 0.8 (1 - 2A) s2 + e2,   e ~ N(0, noise_sd^2 I)
/// Reward: 0.9 / (1 + exp((2A - 1)(s1 - 2 s2))) + Unif[-reward_noise, reward_noise]
struct SimpleParams {
  double c1 = 0.0;
  double c2 = 0.0;
  double noise_sd = 0.5;
  double reward_noise = 0.1;
};

/// Cart-pole with Euler integration (dt = 0.02, cart 1.0, pole 0.1).
/// `pole_length` is the pole half-length. Action 0 pushes left, 1 right.
struct CartPoleParams {
  double pole_length = 0.5;
  double push_force = 10.0;
};

/// Mountain car. Velocity update:
///   v += (A - 1) * force - gravity_scale * gravity * cos(3 x)
/// `gravity` is the heterogeneity parameter, quoted in [0.01, 0.035].
struct MountainCarParams {
  double gravity = 0.025;
  double force = 0.0015;
  double gravity_scale = 0.1;
};

/// Tabular MDP. P is row-major [s][a][s'], reward [s][a], nu [s].
/// Observations are one-hot vectors of length n_states.
struct FiniteParams {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward;
  std::vector<double> initial;

  double p(std::size_t s, std::size_t a, std::size_t s2) const {
    return transition[(s * n_actions + a) * n_states + s2];
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }
};

/// Finite discretization of a linear MDP: P(s'|s,a) = mu(s')^T psi(s,a),
/// r(s,a) = theta^T psi(s,a). psi is [s][a][k] (each psi(s,a) on the simplex),
/// mu is [k][s'] (each mu_k a distribution over states).
struct LinearParams {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t dim = 0;
  std::vector<double> psi;
  std::vector<double> mu;
  std::vector<double> theta;
  std::vector<double> initial;

  double psi_at(std::size_t s, std::size_t a, std::size_t k) const {
    return psi[(s * n_actions + a) * dim + k];
  }
  /// Tabular view of the same MDP.
  FiniteParams to_finite() const;
};

using EnvParams =
    std::variant<SimpleParams, CartPoleParams, MountainCarParams, FiniteParams, LinearParams>;

enum class Family { Simple, CartPole, MountainCar, Finite, Linear };

Family family_of(const EnvParams& params) noexcept;
std::string family_name(Family f);
Family parse_family(const std::string& name);

std::size_t state_dim(const EnvParams& params);
std::size_t action_count(const EnvParams& params);
/// Step limit; 0 means unbounded.
std::size_t max_steps(const EnvParams& params);
/// Bound on |reward| used to scale value-function output bounds.
double reward_bound(const EnvParams& params);

/// Throws std::invalid_argument when invariants fail (finite rows not summing
/// to one, non-positive physical constants, ...).
void validate(const EnvParams& params);

struct EnvState {
  std::vector<double> observation;
  std::size_t steps = 0;
  bool terminated = false;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
};

/// Draws S_0 from the environment's initial distribution.
EnvState env_reset(const EnvParams& params, RngStream& rng);

/// Advances one step. Throws std::logic_error on a terminated state and
/// std::invalid_argument on an invalid action.
StepResult env_step(const EnvParams& params, const EnvState& state, int action,
                    RngStream& rng);

/// Starts an episode at a given observation (used to replay the initial
/// states of offline trajectories during evaluation).
EnvState env_start_at(const EnvParams& params, std::vector<double> observation);

/// Index of the one-hot observation of a finite environment.
std::size_t finite_index(const std::vector<double>& observation);

// ---------------------------------------------------------------------------
// Behavior policies used for data collection.

enum class BehaviorKind {
  /// A ~ Bernoulli(1/2) over two actions (uniform over all actions in general).
  Uniform,
  /// CartPole: push in the direction of the pole angle, sign(theta).
  PoleAngleSign,
  /// MountainCar: accelerate in the direction of the velocity with
  /// probability 0.8, do nothing with probability 0.2.
  VelocitySign,
  /// Finite: explicit table pi_b[s][a].
  Tabular,
};

struct BehaviorPolicy {
  BehaviorKind kind = BehaviorKind::Uniform;
  double follow_prob = 0.8;
  std::vector<double> table;

  int act(const EnvParams& params, const std::vector<double>& observation,
          RngStream& rng) const;
};

/// Conventional behavior policy for an environment family.
BehaviorPolicy default_behavior(Family family);

BehaviorKind parse_behavior(const std::string& name);
std::string behavior_name(BehaviorKind kind);

}  // namespace p4l::envs
