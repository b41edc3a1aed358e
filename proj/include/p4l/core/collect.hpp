#pragma once

#include <cstddef>
#include <vector>

#include "p4l/core/config.hpp"
#include "p4l/core/dataset.hpp"
#include "p4l/core/rng.hpp"
#include "p4l/envs/envs.hpp"

namespace p4l {

/// Rolls every individual of every group for T steps under the group's
/// behavior policy, starting from a draw of nu. Individuals are numbered
/// group by group and individual i uses rng.fork(i), so the result does not
/// depend on collection order. Once an episode terminates the panel is padded
/// with absorbing transitions (terminal observation repeated, reward 0).
/// `behaviors` holds one policy per group, or a single policy shared by all.
OfflineDataset collect_dataset(const std::vector<GroupSpec>& groups,
                               const std::vector<envs::BehaviorPolicy>& behaviors,
                               std::size_t T, const RngStream& rng);

/// Behavior policy named by config.behavior ("default" resolves per family).
envs::BehaviorPolicy resolve_behavior(const ExperimentConfig& config);

}  // namespace p4l
