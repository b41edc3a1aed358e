#include "p4l/core/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "p4l/core/error.hpp"

namespace p4l {

using nlohmann::json;

std::size_t ExperimentConfig::n_individuals() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.n_individuals;
  return n;
}

double ExperimentConfig::resolved_alpha() const {
  if (alpha) return *alpha;
  const double nt = static_cast<double>(n_individuals() * T);
  return alpha_c * std::sqrt(std::log(nt) / nt);
}

double ExperimentConfig::resolved_mu() const {
  if (mu) return *mu;
  return mu_scale * std::sqrt(static_cast<double>(n_individuals()) / static_cast<double>(T));
}

std::size_t default_horizon(double gamma) {
  if (gamma <= 0.0) return 1;
  return static_cast<std::size_t>(std::ceil(std::log(1e-4) / std::log(gamma)));
}

std::size_t ExperimentConfig::resolved_eval_horizon() const {
  if (eval_horizon > 0) return eval_horizon;
  const std::size_t limit = groups.empty() ? 0 : envs::max_steps(groups.front().params);
  return limit > 0 ? limit : default_horizon(gamma);
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& what) { throw SchemaError("invalid config: " + what); };
  if (c.groups.empty()) fail("at least one group is required");
  for (const auto& g : c.groups) {
    if (g.n_individuals == 0) fail("group '" + g.label + "' has no individuals");
    if (envs::family_of(g.params) != c.env) fail("group '" + g.label + "' has the wrong family");
    try {
      envs::validate(g.params);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  if (c.T < 1) fail("T must be >= 1");
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) fail("gamma must lie in [0, 1)");
  if (c.n_features < 1) fail("n_features must be >= 1");
  if (c.bandwidth_subsample < 2) fail("bandwidth_subsample must be >= 2");
  if (c.latent_dim < 1) fail("latent_dim must be >= 1");
  if (c.architecture == Architecture::Residual && c.hidden_width < c.n_features + c.latent_dim)
    fail("hidden_width must be >= n_features + latent_dim for the residual shortcut");
  if (!(c.f_bound > 0.0)) fail("f_bound must be positive");
  if (c.K < 1) fail("K must be >= 1");
  if (c.K > c.n_individuals()) fail("K exceeds the number of individuals");
  if (c.alpha && !(*c.alpha >= 0.0)) fail("alpha must be >= 0");
  if (!(c.alpha_c >= 0.0)) fail("alpha_c must be >= 0");
  if (c.mu && !(*c.mu >= 0.0)) fail("mu must be >= 0");
  if (!(c.mu_scale >= 0.0)) fail("mu_scale must be >= 0");
  if (!(c.rho > 0.0)) fail("rho must be > 0");
  for (double lr : {c.lr_f, c.lr_q, c.lr_pi, c.lr_lambda, c.lr_u})
    if (!(lr >= 0.0)) fail("learning rates must be >= 0");
  if (!(c.lambda_init >= 0.0)) fail("lambda_init must be >= 0");
  if (c.minibatch < 1 || c.minibatch > c.n_individuals() * c.T)
    fail("minibatch must satisfy 1 <= n0 <= N*T");
  if (c.patience < 1) fail("patience must be >= 1");
  if (c.value_pairs_per_step < 1) fail("value_pairs_per_step must be >= 1");
  for (std::size_t k : c.k_values)
    if (k < 1 || k > c.n_individuals()) fail("k_values entries must lie in [1, N]");
  if (c.k_max < 1) fail("k_max must be >= 1");
  if (c.fqi_iters < 1) fail("fqi_iters must be >= 1");
  if (!(c.ridge > 0.0)) fail("ridge must be > 0");
  if (c.replications < 1) fail("replications must be >= 1");
  if (c.n_eval_traj < 1) fail("n_eval_traj must be >= 1");
}

namespace {

json group_to_json(const GroupSpec& g) {
  json j;
  j["label"] = g.label;
  j["n"] = g.n_individuals;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, envs::SimpleParams>) {
          j["c1"] = p.c1;
          j["c2"] = p.c2;
          j["noise_sd"] = p.noise_sd;
          j["reward_noise"] = p.reward_noise;
        } else if constexpr (std::is_same_v<P, envs::CartPoleParams>) {
          j["pole_length"] = p.pole_length;
          j["push_force"] = p.push_force;
        } else if constexpr (std::is_same_v<P, envs::MountainCarParams>) {
          j["gravity"] = p.gravity;
          j["force"] = p.force;
          j["gravity_scale"] = p.gravity_scale;
        } else if constexpr (std::is_same_v<P, envs::FiniteParams>) {
          j["n_states"] = p.n_states;
          j["n_actions"] = p.n_actions;
          j["transition"] = p.transition;
          j["reward"] = p.reward;
          j["initial"] = p.initial;
        } else {
          j["n_states"] = p.n_states;
          j["n_actions"] = p.n_actions;
          j["dim"] = p.dim;
          j["psi"] = p.psi;
          j["mu"] = p.mu;
          j["theta"] = p.theta;
          j["initial"] = p.initial;
        }
      },
      g.params);
  return j;
}

template <class T>
void take(const json& j, const char* key, T& out, std::set<std::string>& used) {
  used.insert(key);
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& used, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!used.count(it.key())) throw SchemaError("unknown config key '" + it.key() + "'" + where);
}

GroupSpec group_from_json(const json& j, envs::Family family, std::size_t index) {
  GroupSpec g;
  std::set<std::string> used;
  g.label = std::string(1, static_cast<char>('a' + index % 26));
  take(j, "label", g.label, used);
  take(j, "n", g.n_individuals, used);
  switch (family) {
    case envs::Family::Simple: {
      envs::SimpleParams p;
      take(j, "c1", p.c1, used);
      take(j, "c2", p.c2, used);
      take(j, "noise_sd", p.noise_sd, used);
      take(j, "reward_noise", p.reward_noise, used);
      g.params = p;
      break;
    }
    case envs::Family::CartPole: {
      envs::CartPoleParams p;
      take(j, "pole_length", p.pole_length, used);
      take(j, "push_force", p.push_force, used);
      g.params = p;
      break;
    }
    case envs::Family::MountainCar: {
      envs::MountainCarParams p;
      take(j, "gravity", p.gravity, used);
      take(j, "force", p.force, used);
      take(j, "gravity_scale", p.gravity_scale, used);
      g.params = p;
      break;
    }
    case envs::Family::Finite: {
      envs::FiniteParams p;
      take(j, "n_states", p.n_states, used);
      take(j, "n_actions", p.n_actions, used);
      take(j, "transition", p.transition, used);
      take(j, "reward", p.reward, used);
      take(j, "initial", p.initial, used);
      g.params = p;
      break;
    }
    case envs::Family::Linear: {
      envs::LinearParams p;
      take(j, "n_states", p.n_states, used);
      take(j, "n_actions", p.n_actions, used);
      take(j, "dim", p.dim, used);
      take(j, "psi", p.psi, used);
      take(j, "mu", p.mu, used);
      take(j, "theta", p.theta, used);
      take(j, "initial", p.initial, used);
      g.params = p;
      break;
    }
  }
  reject_unknown(j, used, " in group " + std::to_string(index));
  return g;
}

const char* lambda_update_name(LambdaUpdate u) { return u == LambdaUpdate::Paper ? "paper" : "ascent"; }
const char* latent_init_name(LatentInit l) { return l == LatentInit::Embedding ? "embedding" : "random"; }
const char* f_restart_name(FRestart r) { return r == FRestart::Cold ? "cold" : "warm"; }
const char* architecture_name(Architecture a) { return a == Architecture::Linear ? "linear" : "residual"; }

}  // namespace

std::string to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["env"] = envs::family_name(c.env);
  json groups = json::array();
  for (const auto& g : c.groups) groups.push_back(group_to_json(g));
  j["groups"] = groups;
  j["behavior"] = c.behavior;
  j["behavior_follow_prob"] = c.behavior_follow_prob;
  j["T"] = c.T;
  j["gamma"] = c.gamma;
  j["n_features"] = c.n_features;
  j["bandwidth_subsample"] = c.bandwidth_subsample;
  j["architecture"] = architecture_name(c.architecture);
  j["hidden_width"] = c.hidden_width;
  j["latent_dim"] = c.latent_dim;
  j["f_bound"] = c.f_bound;
  j["K"] = c.K;
  j["alpha"] = c.alpha ? json(*c.alpha) : json(nullptr);
  j["alpha_c"] = c.alpha_c;
  j["mu"] = c.mu ? json(*c.mu) : json(nullptr);
  j["mu_scale"] = c.mu_scale;
  j["rho"] = c.rho;
  j["lr_f"] = c.lr_f;
  j["lr_q"] = c.lr_q;
  j["lr_pi"] = c.lr_pi;
  j["lr_lambda"] = c.lr_lambda;
  j["lr_u"] = c.lr_u;
  j["lambda_init"] = c.lambda_init;
  j["lambda_update"] = lambda_update_name(c.lambda_update);
  j["latent_init"] = latent_init_name(c.latent_init);
  j["latent_init_scale"] = c.latent_init_scale;
  j["f_restart"] = f_restart_name(c.f_restart);
  j["minibatch"] = c.minibatch;
  j["outer_iters"] = c.outer_iters;
  j["f_steps"] = c.f_steps;
  j["q_steps"] = c.q_steps;
  j["pi_steps"] = c.pi_steps;
  j["u_steps"] = c.u_steps;
  j["inner_tol"] = c.inner_tol;
  j["patience"] = c.patience;
  j["outer_tol"] = c.outer_tol;
  j["admm_tol"] = c.admm_tol;
  j["extra_initial"] = c.extra_initial;
  j["value_pairs_per_step"] = c.value_pairs_per_step;
  j["k_values"] = c.k_values;
  j["run_auto"] = c.run_auto;
  j["k_max"] = c.k_max;
  j["run_fqi"] = c.run_fqi;
  j["run_cluster_fqi"] = c.run_cluster_fqi;
  j["fqi_iters"] = c.fqi_iters;
  j["ridge"] = c.ridge;
  j["replications"] = c.replications;
  j["n_eval_traj"] = c.n_eval_traj;
  j["eval_horizon"] = c.eval_horizon;
  j["eval_from_data"] = c.eval_from_data;
  j["eval_greedy"] = c.eval_greedy;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), 0);
  }
  if (!j.is_object()) throw SchemaError("config must be a JSON object");
  ExperimentConfig c;
  std::set<std::string> used;
  try {
    take(j, "name", c.name, used);
    std::string env = envs::family_name(c.env);
    take(j, "env", env, used);
    c.env = envs::parse_family(env);
    used.insert("groups");
    if (j.contains("groups")) {
      const json& gs = j.at("groups");
      if (!gs.is_array()) throw SchemaError("groups must be an array");
      for (std::size_t k = 0; k < gs.size(); ++k)
        c.groups.push_back(group_from_json(gs[k], c.env, k));
    }
    take(j, "behavior", c.behavior, used);
    take(j, "behavior_follow_prob", c.behavior_follow_prob, used);
    take(j, "T", c.T, used);
    take(j, "gamma", c.gamma, used);
    take(j, "n_features", c.n_features, used);
    take(j, "bandwidth_subsample", c.bandwidth_subsample, used);
    std::string arch = architecture_name(c.architecture);
    take(j, "architecture", arch, used);
    if (arch == "linear") c.architecture = Architecture::Linear;
    else if (arch == "residual") c.architecture = Architecture::Residual;
    else throw SchemaError("architecture must be 'linear' or 'residual'");
    take(j, "hidden_width", c.hidden_width, used);
    take(j, "latent_dim", c.latent_dim, used);
    take(j, "f_bound", c.f_bound, used);
    take(j, "K", c.K, used);
    used.insert("alpha");
    if (j.contains("alpha") && !j.at("alpha").is_null()) c.alpha = j.at("alpha").get<double>();
    take(j, "alpha_c", c.alpha_c, used);
    used.insert("mu");
    if (j.contains("mu") && !j.at("mu").is_null()) c.mu = j.at("mu").get<double>();
    take(j, "mu_scale", c.mu_scale, used);
    take(j, "rho", c.rho, used);
    take(j, "lr_f", c.lr_f, used);
    take(j, "lr_q", c.lr_q, used);
    take(j, "lr_pi", c.lr_pi, used);
    take(j, "lr_lambda", c.lr_lambda, used);
    take(j, "lr_u", c.lr_u, used);
    take(j, "lambda_init", c.lambda_init, used);
    std::string lu = lambda_update_name(c.lambda_update);
    take(j, "lambda_update", lu, used);
    if (lu == "paper") c.lambda_update = LambdaUpdate::Paper;
    else if (lu == "ascent") c.lambda_update = LambdaUpdate::Ascent;
    else throw SchemaError("lambda_update must be 'paper' or 'ascent'");
    std::string li = latent_init_name(c.latent_init);
    take(j, "latent_init", li, used);
    if (li == "embedding") c.latent_init = LatentInit::Embedding;
    else if (li == "random") c.latent_init = LatentInit::Random;
    else throw SchemaError("latent_init must be 'embedding' or 'random'");
    take(j, "latent_init_scale", c.latent_init_scale, used);
    std::string fr = f_restart_name(c.f_restart);
    take(j, "f_restart", fr, used);
    if (fr == "cold") c.f_restart = FRestart::Cold;
    else if (fr == "warm") c.f_restart = FRestart::Warm;
    else throw SchemaError("f_restart must be 'cold' or 'warm'");
    take(j, "minibatch", c.minibatch, used);
    take(j, "outer_iters", c.outer_iters, used);
    take(j, "f_steps", c.f_steps, used);
    take(j, "q_steps", c.q_steps, used);
    take(j, "pi_steps", c.pi_steps, used);
    take(j, "u_steps", c.u_steps, used);
    take(j, "inner_tol", c.inner_tol, used);
    take(j, "patience", c.patience, used);
    take(j, "outer_tol", c.outer_tol, used);
    take(j, "admm_tol", c.admm_tol, used);
    take(j, "extra_initial", c.extra_initial, used);
    take(j, "value_pairs_per_step", c.value_pairs_per_step, used);
    take(j, "k_values", c.k_values, used);
    take(j, "run_auto", c.run_auto, used);
    take(j, "k_max", c.k_max, used);
    take(j, "run_fqi", c.run_fqi, used);
    take(j, "run_cluster_fqi", c.run_cluster_fqi, used);
    take(j, "fqi_iters", c.fqi_iters, used);
    take(j, "ridge", c.ridge, used);
    take(j, "replications", c.replications, used);
    take(j, "n_eval_traj", c.n_eval_traj, used);
    take(j, "eval_horizon", c.eval_horizon, used);
    take(j, "eval_from_data", c.eval_from_data, used);
    take(j, "eval_greedy", c.eval_greedy, used);
    take(j, "seed", c.seed, used);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config field has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  reject_unknown(j, used, "");
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open config file for writing: " + path.string());
  os << to_json(config);
  if (!os) throw Error("failed writing config file: " + path.string());
}

std::vector<GroupSpec> simple_groups(std::size_t n_per_group) {
  return {
      {"a", envs::SimpleParams{0.0, -0.6}, n_per_group},
      {"b", envs::SimpleParams{0.6, 0.4}, n_per_group},
      {"c", envs::SimpleParams{-0.7, 0.5}, n_per_group},
  };
}

std::vector<GroupSpec> cartpole_setting_a(std::size_t n_per_group) {
  return {
      {"2/0.85", envs::CartPoleParams{0.85, 2.0}, n_per_group},
      {"5/0.85", envs::CartPoleParams{0.85, 5.0}, n_per_group},
      {"10/0.85", envs::CartPoleParams{0.85, 10.0}, n_per_group},
  };
}

std::vector<GroupSpec> mountaincar_groups(std::size_t n_per_group) {
  return {
      {"0.01", envs::MountainCarParams{0.01}, n_per_group},
      {"0.025", envs::MountainCarParams{0.025}, n_per_group},
      {"0.035", envs::MountainCarParams{0.035}, n_per_group},
  };
}

}  // namespace p4l
