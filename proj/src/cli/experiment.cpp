#include "p4l/cli/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "p4l/cli/report.hpp"
#include "p4l/core/cluster.hpp"
#include "p4l/core/collect.hpp"
#include "p4l/solver/groups.hpp"

namespace p4l::cli {

using json = nlohmann::json;

std::uint64_t replication_seed(const ExperimentConfig& config, std::size_t r) {
  return config.seed + r;
}

std::vector<std::vector<std::size_t>> group_members(const OfflineDataset& ds,
                                                    std::size_t n_groups) {
  std::vector<std::vector<std::size_t>> m(n_groups);
  const auto& g = ds.groups();
  if (g.size() != ds.n_individuals()) throw SchemaError("dataset carries no group labels");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < 0 || static_cast<std::size_t>(g[i]) >= n_groups)
      throw SchemaError("dataset group label out of range");
    m[static_cast<std::size_t>(g[i])].push_back(i);
  }
  return m;
}

std::vector<double> draw_initial_states(const ExperimentConfig& config, std::size_t count,
                                        const RngStream& rng) {
  std::vector<double> out;
  for (std::size_t k = 0; k < count; ++k) {
    RngStream r = rng.fork(k);
    const auto st = envs::env_reset(config.groups[k % config.groups.size()].params, r);
    out.insert(out.end(), st.observation.begin(), st.observation.end());
  }
  return out;
}

namespace {

int sample(const std::vector<double>& p, RngStream& rng) {
  double x = rng.uniform();
  for (std::size_t a = 0; a + 1 < p.size(); ++a) {
    if (x < p[a]) return static_cast<int>(a);
    x -= p[a];
  }
  return static_cast<int>(p.size() - 1);
}

bool bounded_episodes(envs::Family f) {
  return f == envs::Family::CartPole || f == envs::Family::MountainCar;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

eval::PolicyFn p4l_policy(const solver::P4LResult& result, std::vector<std::size_t> members,
                          bool greedy) {
  if (members.empty()) throw std::invalid_argument("p4l_policy: no members");
  return [&result, members = std::move(members), greedy](std::size_t k, std::span<const double> s,
                                                         RngStream& rng) {
    const auto u = result.latents.u.row(members[k % members.size()]);
    const auto p = models::policy_probs(result.bundle, s, u);
    if (greedy) return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    return sample(p, rng);
  };
}

eval::PolicyFn baseline_policy(const baselines::BaselinePolicy& policy,
                               std::vector<std::size_t> members) {
  if (members.empty()) throw std::invalid_argument("baseline_policy: no members");
  return [&policy, members = std::move(members)](std::size_t k, std::span<const double> s,
                                                 RngStream&) {
    return policy.act(members[k % members.size()], s);
  };
}

eval::McOptions group_eval_options(const ExperimentConfig& config, const OfflineDataset& ds,
                                   const std::vector<std::size_t>& members) {
  eval::McOptions o;
  o.n_traj = config.n_eval_traj;
  o.horizon = config.resolved_eval_horizon();
  o.count_steps = bounded_episodes(config.env);
  if (config.eval_from_data)
    for (std::size_t i : members) o.starts.push_back(ds.at(i, 0).state);
  return o;
}

eval::EvalReport evaluate_method(const std::string& method, const ExperimentConfig& config,
                                 const OfflineDataset& ds, const PolicyFactory& factory,
                                 std::size_t replication, std::uint64_t seed) {
  const auto members = group_members(ds, config.groups.size());
  eval::EvalReport rep;
  rep.method = method;
  rep.replication = replication;
  rep.seed = seed;
  const double n = static_cast<double>(ds.n_individuals());
  for (std::size_t g = 0; g < config.groups.size(); ++g) {
    eval::GroupValue gv;
    gv.group = config.groups[g].label;
    gv.weight = static_cast<double>(members[g].size()) / n;
    gv.mc = eval::mc_policy_value(config.groups[g].params, factory(members[g]), config.gamma,
                                  group_eval_options(config, ds, members[g]),
                                  RngStream(seed, Stream::Eval, g));
    rep.groups.push_back(std::move(gv));
  }
  return rep;
}

ReplicationResult run_replication(const ExperimentConfig& config, std::size_t r) {
  ReplicationResult out;
  out.replication = r;
  const std::uint64_t seed = replication_seed(config, r);
  out.seed = seed;
  std::string stage = "collect";
  auto t0 = std::chrono::steady_clock::now();
  auto lap = [&](const std::string& next) {
    out.stage_seconds[stage] += seconds_since(t0);
    stage = next;
    t0 = std::chrono::steady_clock::now();
  };
  try {
    const OfflineDataset ds =
        collect_dataset(config.groups, {resolve_behavior(config)}, config.T,
                        RngStream(seed, Stream::Data));
    lap("features");
    solver::RunInputs in;
    in.dataset = &ds;
    RngStream frng(seed, Stream::Features);
    in.basis = fit_rbf_basis(ds.pooled_states(), ds.state_dim(), config.n_features, frng,
                             config.bandwidth_subsample);
    in.extra_initial =
        draw_initial_states(config, config.extra_initial, RngStream(seed, Stream::Init, 1));

    lap("select_groups");
    std::optional<solver::GroupSelection> sel;
    if (config.run_auto || config.run_cluster_fqi) {
      sel = solver::select_num_groups(ds, std::min(config.k_max, ds.n_individuals()));
      out.auto_k = sel->K;
    }

    lap("train");
    std::vector<std::pair<std::string, solver::P4LResult>> p4l;
    p4l.reserve(config.k_values.size() + 1);
    std::map<std::size_t, std::size_t> by_k;
    auto train = [&](const std::string& name, std::size_t K) {
      const auto it = by_k.find(K);
      if (it != by_k.end()) {
        p4l.emplace_back(name, p4l[it->second].second);
      } else {
        in.K = K;
        p4l.emplace_back(name, solver::run_p4l(in, config, seed));
        by_k[K] = p4l.size() - 1;
      }
      const auto& res = p4l.back().second;
      out.runs.push_back({name, res.state.history, K,
                          best_permutation_accuracy(res.assignment, ds.groups())});
    };
    for (std::size_t K : config.k_values) train("P4L-K" + std::to_string(K), K);
    if (config.run_auto) train("P4L-Auto", sel->K);

    const baselines::FqiOptions fopt{config.fqi_iters, config.ridge};
    std::vector<std::pair<std::string, baselines::BaselinePolicy>> base;
    if (config.run_fqi) base.emplace_back("FQI", baselines::run_fqi(ds, in.basis, config.gamma, fopt));
    if (config.run_cluster_fqi)
      base.emplace_back("ClusterFQI", baselines::run_cluster_fqi(ds, in.basis, sel->labels, sel->K,
                                                                 config.gamma, fopt));

    lap("evaluate");
    for (const auto& [name, res] : p4l)
      out.reports.push_back(evaluate_method(
          name, config, ds,
          [&res](const std::vector<std::size_t>& m) { return p4l_policy(res, m, false); }, r, seed));
    if (config.eval_greedy)
      for (const auto& [name, res] : p4l)
        out.reports.push_back(evaluate_method(
            name + "-greedy", config, ds,
            [&res](const std::vector<std::size_t>& m) { return p4l_policy(res, m, true); }, r,
            seed));
    for (const auto& [name, pol] : base)
      out.reports.push_back(evaluate_method(
          name, config, ds,
          [&pol](const std::vector<std::size_t>& m) { return baseline_policy(pol, m); }, r, seed));
    const envs::BehaviorPolicy behavior = resolve_behavior(config);
    out.reports.push_back(evaluate_method(
        "Behavior", config, ds,
        [&](const std::vector<std::size_t>& m) -> eval::PolicyFn {
          const auto& env = config.groups[static_cast<std::size_t>(ds.groups()[m.front()])].params;
          return [&behavior, &env](std::size_t, std::span<const double> s, RngStream& rng) {
            return behavior.act(env, std::vector<double>(s.begin(), s.end()), rng);
          };
        },
        r, seed));
    for (const auto& rep : out.reports) rep.validate();
    lap("done");
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, seed, e.what());
  }
  return out;
}

std::size_t worker_count() {
  if (const char* w = std::getenv("P4L_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(w, &end, 10);
    if (end != w && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw std::invalid_argument("P4L_WORKERS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string content_hash(std::string_view content) {
  const std::string head = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, head.data(), head.size()) &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) &&
                  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("content_hash: SHA-1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int k = 0; k < len; ++k) {
    std::snprintf(buf, sizeof buf, "%02x", md[k]);
    hex += buf;
  }
  return hex;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open for writing: " + tmp.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw Error("failed writing: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string manifest_json(const RunManifest& m) {
  json j;
  j["status"] = m.status;
  j["config_hash"] = m.config_hash;
  j["config"] = json::parse(m.config_json);
  j["out_dir"] = m.out_dir.string();
  j["files"] = m.files;
  j["stage_seconds"] = m.stage_seconds;
  j["seeds"] = m.seeds;
  j["auto_k"] = m.auto_k;
  if (m.status == "failed") {
    j["failed_stage"] = m.failed_stage;
    j["failed_seed"] = m.failed_seed;
    j["error"] = m.error;
  }
  return j.dump(2) + "\n";
}

RunManifest run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                           std::size_t workers) {
  validate(config);
  if (workers == 0) throw std::invalid_argument("run_experiment: workers must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "convergence");
  fs::remove(out_dir / "FAILED");

  RunManifest m;
  m.status = "running";
  m.config_json = to_json(config);
  m.config_hash = content_hash(m.config_json);
  m.out_dir = out_dir;
  for (std::size_t r = 0; r < config.replications; ++r) m.seeds.push_back(replication_seed(config, r));
  write_file_atomic(out_dir / "manifest.json", manifest_json(m));
  write_file_atomic(out_dir / "config.json", m.config_json);
  m.files.push_back("config.json");

  const auto t_start = std::chrono::steady_clock::now();
  std::vector<std::optional<ReplicationResult>> results(config.replications);
  std::optional<StageError> failure;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t r = next++;
      if (r >= config.replications) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        results[r] = run_replication(config, r);
      } catch (const StageError& e) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = e;
        return;
      }
    }
  };
  const std::size_t n_threads = std::min(workers, std::max<std::size_t>(config.replications, 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  auto fail = [&](const StageError& e) {
    m.status = "failed";
    m.failed_stage = e.stage();
    m.failed_seed = e.seed();
    m.error = e.what();
    write_file_atomic(out_dir / "FAILED",
                      "stage " + e.stage() + "\nseed " + std::to_string(e.seed()) + "\nerror " +
                          std::string(e.what()) + "\n");
    write_file_atomic(out_dir / "manifest.json", manifest_json(m));
    throw e;
  };
  if (failure) fail(*failure);

  try {
    std::ostringstream values;
    eval::write_values_header(values);
    for (const auto& res : results) {
      for (const auto& rep : res->reports) eval::write_values_rows(values, rep);
      for (const auto& [stage, s] : res->stage_seconds) m.stage_seconds[stage] += s;
      m.auto_k.push_back(res->auto_k);
      for (const auto& run : res->runs) {
        std::ostringstream h;
        solver::write_history_csv(h, run.history);
        const std::string name =
            "convergence/rep" + std::to_string(res->replication) + "_" + run.method + ".csv";
        write_file_atomic(out_dir / name, h.str());
        m.files.push_back(name);
      }
    }
    write_file_atomic(out_dir / "values.csv", values.str());
    m.files.push_back("values.csv");

    const auto t_report = std::chrono::steady_clock::now();
    std::istringstream in(values.str());
    const Metric metric = bounded_episodes(config.env) ? Metric::Steps : Metric::Value;
    for (const auto& f : emit_outputs(eval::read_values_csv(in), metric, out_dir)) m.files.push_back(f);
    m.stage_seconds["report"] = seconds_since(t_report);
  } catch (const std::exception& e) {
    fail(StageError("report", config.seed, e.what()));
  }
  m.stage_seconds["wall"] = seconds_since(t_start);
  m.status = "complete";
  write_file_atomic(out_dir / "manifest.json", manifest_json(m));
  return m;
}

}  // namespace p4l::cli
