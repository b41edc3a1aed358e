#include "p4l/core/collect.hpp"

#include <stdexcept>

namespace p4l {

OfflineDataset collect_dataset(const std::vector<GroupSpec>& groups,
                               const std::vector<envs::BehaviorPolicy>& behaviors,
                               std::size_t T, const RngStream& rng) {
  if (groups.empty()) throw std::invalid_argument("collect_dataset: empty group list");
  if (T < 1) throw std::invalid_argument("collect_dataset: T must be >= 1");
  if (behaviors.size() != 1 && behaviors.size() != groups.size())
    throw std::invalid_argument("collect_dataset: need one behavior policy or one per group");

  const std::size_t d = envs::state_dim(groups.front().params);
  const std::size_t n_actions = envs::action_count(groups.front().params);
  std::size_t n = 0;
  for (const auto& g : groups) {
    if (envs::state_dim(g.params) != d || envs::action_count(g.params) != n_actions)
      throw std::invalid_argument("collect_dataset: groups disagree on state/action spaces");
    envs::validate(g.params);
    n += g.n_individuals;
  }

  std::vector<Transition> rows;
  rows.reserve(n * T);
  std::vector<int> labels;
  labels.reserve(n);
  std::size_t i = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& params = groups[k].params;
    const auto& behavior = behaviors.size() == 1 ? behaviors[0] : behaviors[k];
    for (std::size_t m = 0; m < groups[k].n_individuals; ++m, ++i) {
      RngStream r = rng.fork(i);
      envs::EnvState state = envs::env_reset(params, r);
      for (std::size_t t = 0; t < T; ++t) {
        Transition tr;
        tr.individual = i;
        tr.t = t;
        tr.state = state.observation;
        tr.action = behavior.act(params, state.observation, r);
        if (state.terminated) {
          tr.reward = 0.0;
          tr.next_state = state.observation;
        } else {
          envs::StepResult step = envs::env_step(params, state, tr.action, r);
          tr.reward = step.reward;
          tr.next_state = step.state.observation;
          state = std::move(step.state);
        }
        rows.push_back(std::move(tr));
      }
      labels.push_back(static_cast<int>(k));
    }
  }
  return OfflineDataset(n, T, d, n_actions, std::move(rows), std::move(labels));
}

envs::BehaviorPolicy resolve_behavior(const ExperimentConfig& config) {
  envs::BehaviorPolicy b = envs::default_behavior(config.env);
  if (config.behavior != "default") b.kind = envs::parse_behavior(config.behavior);
  b.follow_prob = config.behavior_follow_prob;
  return b;
}

}  // namespace p4l
