#pragma once

// Experiment configuration. The on-disk form is a JSON object whose keys are
// exactly the field names below; `groups` is the only nested entry.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "p4l/envs/envs.hpp"

namespace p4l {

struct GroupSpec {
  std::string label;
  envs::EnvParams params;
  std::size_t n_individuals = 0;
};

enum class LambdaUpdate { Paper, Ascent };
enum class LatentInit { Embedding, Random };
/// Where each outer iteration starts the f ascent.
enum class FRestart { Cold, Warm };
enum class Architecture { Linear, Residual };

struct ExperimentConfig {
  std::string name = "experiment";
  envs::Family env = envs::Family::Simple;
  std::vector<GroupSpec> groups;
  /// "default" picks the family's conventional behavior policy.
  std::string behavior = "default";
  double behavior_follow_prob = 0.8;

  std::size_t T = 100;
  double gamma = 0.8;

  // Features.
  std::size_t n_features = 16;
  std::size_t bandwidth_subsample = 2000;

  // Models.
  Architecture architecture = Architecture::Linear;
  std::size_t hidden_width = 32;
  std::size_t latent_dim = 2;
  double f_bound = 2.0;

  // Solver.
  std::size_t K = 3;
  std::optional<double> alpha;
  double alpha_c = 1.0;
  std::optional<double> mu;
  double mu_scale = 10.0;
  double rho = 1.0;
  double lr_f = 0.5;
  double lr_q = 0.5;
  double lr_pi = 0.5;
  double lr_lambda = 0.5;
  double lr_u = 0.05;
  double lambda_init = 1.0;
  LambdaUpdate lambda_update = LambdaUpdate::Paper;
  LatentInit latent_init = LatentInit::Embedding;
  double latent_init_scale = 1.0;
  FRestart f_restart = FRestart::Cold;
  std::size_t minibatch = 256;
  std::size_t outer_iters = 30;
  std::size_t f_steps = 200;
  std::size_t q_steps = 200;
  std::size_t pi_steps = 100;
  std::size_t u_steps = 10;
  double inner_tol = 1e-4;
  std::size_t patience = 5;
  double outer_tol = 1e-4;
  double admm_tol = 1e-2;
  std::size_t extra_initial = 256;
  std::size_t value_pairs_per_step = 512;

  // Experiment protocol.
  std::vector<std::size_t> k_values = {2, 3, 4, 5};
  bool run_auto = true;
  std::size_t k_max = 5;
  bool run_fqi = true;
  bool run_cluster_fqi = true;
  std::size_t fqi_iters = 100;
  double ridge = 1e-4;
  std::size_t replications = 10;
  std::size_t n_eval_traj = 1000;
  /// 0 means ceil(log(1e-4) / log(gamma)).
  std::size_t eval_horizon = 0;
  /// Evaluate from the offline initial states of the group's members rather
  /// than fresh draws from nu.
  bool eval_from_data = false;
  bool eval_greedy = false;
  std::uint64_t seed = 1;

  std::size_t n_individuals() const;
  /// alpha, or alpha_c * sqrt(log(NT) / NT) when unset.
  double resolved_alpha() const;
  /// mu, or mu_scale * sqrt(N / T) when unset.
  double resolved_mu() const;
  std::size_t resolved_eval_horizon() const;
};

/// Throws SchemaError describing the first violated invariant.
void validate(const ExperimentConfig& config);

std::string to_json(const ExperimentConfig& config);
/// Unknown keys are rejected so typos cannot silently fall back to defaults.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Default discounted-evaluation horizon for gamma.
std::size_t default_horizon(double gamma);

/// Standard group suites used by the shipped configs.
std::vector<GroupSpec> simple_groups(std::size_t n_per_group);
std::vector<GroupSpec> cartpole_setting_a(std::size_t n_per_group);
std::vector<GroupSpec> mountaincar_groups(std::size_t n_per_group);

}  // namespace p4l
