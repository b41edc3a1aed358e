#include "p4l/envs/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace p4l::envs {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kGravity = 9.8;
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kTau = 0.02;
constexpr double kThetaLimit = 12.0 * 2.0 * std::numbers::pi / 360.0;
constexpr double kXLimit = 2.4;
constexpr std::size_t kCartPoleMaxSteps = 300;

constexpr double kCarMinPos = -1.2;
constexpr double kCarMaxPos = 0.6;
constexpr double kCarMaxSpeed = 0.07;
constexpr double kCarGoal = 0.5;
constexpr std::size_t kCarMaxSteps = 500;

std::size_t sample_categorical(const double* probs, std::size_t n, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return n - 1;
}

std::vector<double> one_hot(std::size_t n, std::size_t k) {
  std::vector<double> v(n, 0.0);
  v[k] = 1.0;
  return v;
}

void check_distribution(const double* p, std::size_t n, const char* what) {
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!(p[k] >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative entry");
    sum += p[k];
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + ": does not sum to 1");
}

}  // namespace

FiniteParams LinearParams::to_finite() const {
  FiniteParams f;
  f.n_states = n_states;
  f.n_actions = n_actions;
  f.transition.assign(n_states * n_actions * n_states, 0.0);
  f.reward.assign(n_states * n_actions, 0.0);
  f.initial = initial;
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < n_actions; ++a) {
      double r = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double w = psi_at(s, a, k);
        r += theta[k] * w;
        for (std::size_t s2 = 0; s2 < n_states; ++s2)
          f.transition[(s * n_actions + a) * n_states + s2] += w * mu[k * n_states + s2];
      }
      f.reward[s * n_actions + a] = r;
    }
  return f;
}

Family family_of(const EnvParams& params) noexcept {
  return static_cast<Family>(params.index());
}

std::string family_name(Family f) {
  switch (f) {
    case Family::Simple: return "simple";
    case Family::CartPole: return "cartpole";
    case Family::MountainCar: return "mountaincar";
    case Family::Finite: return "finite";
    case Family::Linear: return "linear";
  }
  return "unknown";
}

Family parse_family(const std::string& name) {
  for (Family f : {Family::Simple, Family::CartPole, Family::MountainCar,
                   Family::Finite, Family::Linear})
    if (family_name(f) == name) return f;
  throw std::invalid_argument("unknown environment family '" + name + "'");
}

std::size_t state_dim(const EnvParams& params) {
  return std::visit(overloaded{
                        [](const SimpleParams&) -> std::size_t { return 2; },
                        [](const CartPoleParams&) -> std::size_t { return 4; },
                        [](const MountainCarParams&) -> std::size_t { return 2; },
                        [](const FiniteParams& p) { return p.n_states; },
                        [](const LinearParams& p) { return p.n_states; },
                    },
                    params);
}

std::size_t action_count(const EnvParams& params) {
  return std::visit(overloaded{
                        [](const SimpleParams&) -> std::size_t { return 2; },
                        [](const CartPoleParams&) -> std::size_t { return 2; },
                        [](const MountainCarParams&) -> std::size_t { return 3; },
                        [](const FiniteParams& p) { return p.n_actions; },
                        [](const LinearParams& p) { return p.n_actions; },
                    },
                    params);
}

std::size_t max_steps(const EnvParams& params) {
  switch (family_of(params)) {
    case Family::CartPole: return kCartPoleMaxSteps;
    case Family::MountainCar: return kCarMaxSteps;
    default: return 0;
  }
}

double reward_bound(const EnvParams& params) {
  return std::visit(
      overloaded{
          [](const SimpleParams& p) { return 0.9 + p.reward_noise; },
          [](const CartPoleParams&) { return 1.0; },
          [](const MountainCarParams&) { return 1.0; },
          [](const FiniteParams& p) {
            double m = 0.0;
            for (double r : p.reward) m = std::max(m, std::abs(r));
            return m;
          },
          [](const LinearParams& p) {
            double m = 0.0;
            for (double r : p.to_finite().reward) m = std::max(m, std::abs(r));
            return m;
          },
      },
      params);
}

void validate(const EnvParams& params) {
  std::visit(
      overloaded{
          [](const SimpleParams& p) {
            if (!(p.noise_sd >= 0.0) || !(p.reward_noise >= 0.0))
              throw std::invalid_argument("simple env: noise levels must be >= 0");
          },
          [](const CartPoleParams& p) {
            if (!(p.pole_length > 0.0) || !(p.push_force > 0.0))
              throw std::invalid_argument("cartpole: pole_length and push_force must be > 0");
          },
          [](const MountainCarParams& p) {
            if (!(p.gravity > 0.0)) throw std::invalid_argument("mountaincar: gravity must be > 0");
          },
          [](const FiniteParams& p) {
            if (p.n_states == 0 || p.n_actions == 0)
              throw std::invalid_argument("finite env: empty state or action set");
            if (p.transition.size() != p.n_states * p.n_actions * p.n_states ||
                p.reward.size() != p.n_states * p.n_actions ||
                p.initial.size() != p.n_states)
              throw std::invalid_argument("finite env: table shapes inconsistent");
            for (std::size_t sa = 0; sa < p.n_states * p.n_actions; ++sa)
              check_distribution(p.transition.data() + sa * p.n_states, p.n_states,
                                 "finite env transition row");
            check_distribution(p.initial.data(), p.n_states, "finite env initial distribution");
          },
          [](const LinearParams& p) {
            if (p.psi.size() != p.n_states * p.n_actions * p.dim ||
                p.mu.size() != p.dim * p.n_states || p.theta.size() != p.dim ||
                p.initial.size() != p.n_states)
              throw std::invalid_argument("linear env: table shapes inconsistent");
            for (std::size_t k = 0; k < p.dim; ++k)
              check_distribution(p.mu.data() + k * p.n_states, p.n_states, "linear env mu_k");
            for (std::size_t sa = 0; sa < p.n_states * p.n_actions; ++sa)
              check_distribution(p.psi.data() + sa * p.dim, p.dim, "linear env psi(s,a)");
            check_distribution(p.initial.data(), p.n_states, "linear env initial distribution");
          },
      },
      params);
}

std::size_t finite_index(const std::vector<double>& observation) {
  return static_cast<std::size_t>(
      std::max_element(observation.begin(), observation.end()) - observation.begin());
}

EnvState env_reset(const EnvParams& params, RngStream& rng) {
  EnvState st;
  std::visit(overloaded{
                 [&](const SimpleParams&) { st.observation = {rng.normal(), rng.normal()}; },
                 [&](const CartPoleParams&) {
                   st.observation.resize(4);
                   for (double& v : st.observation) v = rng.uniform(-0.05, 0.05);
                 },
                 [&](const MountainCarParams&) {
                   st.observation = {rng.uniform(-0.6, -0.4), 0.0};
                 },
                 [&](const FiniteParams& p) {
                   st.observation = one_hot(
                       p.n_states, sample_categorical(p.initial.data(), p.n_states, rng));
                 },
                 [&](const LinearParams& p) {
                   st.observation = one_hot(
                       p.n_states, sample_categorical(p.initial.data(), p.n_states, rng));
                 },
             },
             params);
  return st;
}

EnvState env_start_at(const EnvParams& params, std::vector<double> observation) {
  if (observation.size() != state_dim(params))
    throw std::invalid_argument("env_start_at: observation dimension mismatch");
  EnvState st;
  st.observation = std::move(observation);
  return st;
}

namespace {

StepResult step_finite(const FiniteParams& p, const EnvState& state, int action,
                       RngStream& rng) {
  const std::size_t s = finite_index(state.observation);
  const auto a = static_cast<std::size_t>(action);
  const std::size_t s2 =
      sample_categorical(p.transition.data() + (s * p.n_actions + a) * p.n_states,
                         p.n_states, rng);
  StepResult out;
  out.reward = p.r(s, a);
  out.state.observation = one_hot(p.n_states, s2);
  out.state.steps = state.steps + 1;
  return out;
}

}  // namespace

StepResult env_step(const EnvParams& params, const EnvState& state, int action,
                    RngStream& rng) {
  if (state.terminated) throw std::logic_error("env_step: episode already terminated");
  if (action < 0 || static_cast<std::size_t>(action) >= action_count(params))
    throw std::invalid_argument("env_step: invalid action");
  if (state.observation.size() != state_dim(params))
    throw std::invalid_argument("env_step: observation dimension mismatch");

  return std::visit(
      overloaded{
          [&](const SimpleParams& p) {
            const double s1 = state.observation[0];
            const double s2 = state.observation[1];
            const double sgn = 2.0 * action - 1.0;
            StepResult out;
            const double e1 = p.noise_sd > 0.0 ? p.noise_sd * rng.normal() : 0.0;
            const double e2 = p.noise_sd > 0.0 ? p.noise_sd * rng.normal() : 0.0;
            out.state.observation = {0.8 * sgn * s1 + p.c1 * s2 + e1,
                                     p.c2 * s1 - 0.8 * sgn * s2 + e2};
            const double noise =
                p.reward_noise > 0.0 ? rng.uniform(-p.reward_noise, p.reward_noise) : 0.0;
            out.reward = 0.9 / (1.0 + std::exp(sgn * (s1 - 2.0 * s2))) + noise;
            out.state.steps = state.steps + 1;
            return out;
          },
          [&](const CartPoleParams& p) {
            const double x = state.observation[0];
            const double x_dot = state.observation[1];
            const double theta = state.observation[2];
            const double theta_dot = state.observation[3];
            const double force = action == 1 ? p.push_force : -p.push_force;
            const double total_mass = kCartMass + kPoleMass;
            const double pole_ml = kPoleMass * p.pole_length;
            const double c = std::cos(theta);
            const double s = std::sin(theta);
            const double temp = (force + pole_ml * theta_dot * theta_dot * s) / total_mass;
            const double theta_acc =
                (kGravity * s - c * temp) /
                (p.pole_length * (4.0 / 3.0 - kPoleMass * c * c / total_mass));
            const double x_acc = temp - pole_ml * theta_acc * c / total_mass;
            StepResult out;
            out.state.observation = {x + kTau * x_dot, x_dot + kTau * x_acc,
                                     theta + kTau * theta_dot, theta_dot + kTau * theta_acc};
            out.state.steps = state.steps + 1;
            out.reward = 1.0;
            const auto& o = out.state.observation;
            out.state.terminated = std::abs(o[0]) > kXLimit || std::abs(o[2]) > kThetaLimit ||
                                   out.state.steps >= kCartPoleMaxSteps;
            return out;
          },
          [&](const MountainCarParams& p) {
            double pos = state.observation[0];
            double vel = state.observation[1];
            StepResult out;
            out.reward = pos >= kCarGoal ? 1.0 : -1.0;
            vel += (action - 1) * p.force - p.gravity_scale * p.gravity * std::cos(3.0 * pos);
            vel = std::clamp(vel, -kCarMaxSpeed, kCarMaxSpeed);
            pos = std::clamp(pos + vel, kCarMinPos, kCarMaxPos);
            if (pos <= kCarMinPos && vel < 0.0) vel = 0.0;
            out.state.observation = {pos, vel};
            out.state.steps = state.steps + 1;
            out.state.terminated = pos >= kCarGoal || out.state.steps >= kCarMaxSteps;
            return out;
          },
          [&](const FiniteParams& p) { return step_finite(p, state, action, rng); },
          [&](const LinearParams& p) { return step_finite(p.to_finite(), state, action, rng); },
      },
      params);
}

int BehaviorPolicy::act(const EnvParams& params, const std::vector<double>& observation,
                        RngStream& rng) const {
  const std::size_t n_actions = action_count(params);
  switch (kind) {
    case BehaviorKind::Uniform:
      return static_cast<int>(rng.below(n_actions));
    case BehaviorKind::PoleAngleSign:
      return observation.at(2) > 0.0 ? 1 : 0;
    case BehaviorKind::VelocitySign: {
      if (!rng.bernoulli(follow_prob)) return 1;
      const double v = observation.at(1);
      return v > 0.0 ? 2 : (v < 0.0 ? 0 : 1);
    }
    case BehaviorKind::Tabular: {
      const std::size_t s = finite_index(observation);
      if (table.size() != state_dim(params) * n_actions)
        throw std::invalid_argument("tabular behavior: table shape mismatch");
      return static_cast<int>(sample_categorical(table.data() + s * n_actions, n_actions, rng));
    }
  }
  return 0;
}

BehaviorPolicy default_behavior(Family family) {
  BehaviorPolicy b;
  switch (family) {
    case Family::CartPole: b.kind = BehaviorKind::PoleAngleSign; break;
    case Family::MountainCar: b.kind = BehaviorKind::VelocitySign; break;
    default: b.kind = BehaviorKind::Uniform; break;
  }
  return b;
}

BehaviorKind parse_behavior(const std::string& name) {
  for (BehaviorKind k : {BehaviorKind::Uniform, BehaviorKind::PoleAngleSign,
                         BehaviorKind::VelocitySign, BehaviorKind::Tabular})
    if (behavior_name(k) == name) return k;
  throw std::invalid_argument("unknown behavior policy '" + name + "'");
}

std::string behavior_name(BehaviorKind kind) {
  switch (kind) {
    case BehaviorKind::Uniform: return "uniform";
    case BehaviorKind::PoleAngleSign: return "pole_angle_sign";
    case BehaviorKind::VelocitySign: return "velocity_sign";
    case BehaviorKind::Tabular: return "tabular";
  }
  return "unknown";
}

}  // namespace p4l::envs
