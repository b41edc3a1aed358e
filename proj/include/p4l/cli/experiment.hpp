#pragma once

// The experiment pipeline: collect, fit the basis, train P4L and the
// baselines, evaluate every method per group, and write one run directory.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "p4l/baselines/baselines.hpp"
#include "p4l/core/config.hpp"
#include "p4l/core/dataset.hpp"
#include "p4l/core/error.hpp"
#include "p4l/eval/eval.hpp"
#include "p4l/solver/solver.hpp"

namespace p4l::cli {

/// A pipeline failure tagged with the stage and replication seed.
class StageError : public Error {
 public:
  StageError(std::string stage, std::uint64_t seed, const std::string& what)
      : Error(stage + " (seed " + std::to_string(seed) + "): " + what),
        stage_(std::move(stage)),
        seed_(seed) {}
  const std::string& stage() const noexcept { return stage_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::string stage_;
  std::uint64_t seed_;
};

/// Seed of replication r.
std::uint64_t replication_seed(const ExperimentConfig& config, std::size_t r);

/// Individuals of each group, in dataset order.
std::vector<std::vector<std::size_t>> group_members(const OfflineDataset& dataset,
                                                    std::size_t n_groups);

/// `count` draws from nu (n x d_s), cycling over the groups' environments.
std::vector<double> draw_initial_states(const ExperimentConfig& config, std::size_t count,
                                        const RngStream& rng);

/// Trajectory k plays the latent of members[k % n]; actions are sampled from
/// the softmax policy, or its argmax when `greedy`.
eval::PolicyFn p4l_policy(const solver::P4LResult& result, std::vector<std::size_t> members,
                          bool greedy);
/// Trajectory k plays the cluster policy of members[k % n].
eval::PolicyFn baseline_policy(const baselines::BaselinePolicy& policy,
                               std::vector<std::size_t> members);

/// MC options for one group: configured trajectory count and horizon, step
/// counting for bounded-episode families, and optionally the members'
/// observed initial states.
eval::McOptions group_eval_options(const ExperimentConfig& config, const OfflineDataset& dataset,
                                   const std::vector<std::size_t>& members);

/// Evaluates one method on every group. Group g uses the stream
/// (seed, Eval, g), so methods share their environment noise.
using PolicyFactory = std::function<eval::PolicyFn(const std::vector<std::size_t>& members)>;
eval::EvalReport evaluate_method(const std::string& method, const ExperimentConfig& config,
                                 const OfflineDataset& dataset, const PolicyFactory& factory,
                                 std::size_t replication, std::uint64_t seed);

struct TrainedRun {
  std::string method;
  std::vector<solver::HistoryRow> history;
  std::size_t K = 0;
  double group_accuracy = 0.0;
};

struct ReplicationResult {
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::vector<eval::EvalReport> reports;
  std::vector<TrainedRun> runs;
  std::size_t auto_k = 0;
  std::map<std::string, double> stage_seconds;
};

/// One full replication. Throws StageError.
ReplicationResult run_replication(const ExperimentConfig& config, std::size_t replication);

/// Worker count from P4L_WORKERS, else the hardware concurrency (>= 1).
std::size_t worker_count();

/// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the content.
std::string content_hash(std::string_view content);

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

struct RunManifest {
  std::string status;  // running, complete or failed
  std::string config_hash;
  std::string config_json;
  std::filesystem::path out_dir;
  std::vector<std::string> files;
  std::map<std::string, double> stage_seconds;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> auto_k;
  std::string failed_stage;
  std::uint64_t failed_seed = 0;
  std::string error;
};

std::string manifest_json(const RunManifest& manifest);

/// Runs every replication (in parallel up to `workers`) and writes
/// manifest.json, config.json, values.csv, convergence/*.csv, the per-group
/// boxplots and the summary tables. The manifest is written before any stage
/// runs; on failure a FAILED marker names the stage and seed and the
/// function throws StageError.
RunManifest run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                           std::size_t workers);

}  // namespace p4l::cli
