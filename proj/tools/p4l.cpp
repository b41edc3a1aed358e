#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "p4l/baselines/baselines.hpp"
#include "p4l/cli/acceptance.hpp"
#include "p4l/cli/experiment.hpp"
#include "p4l/cli/report.hpp"
#include "p4l/core/collect.hpp"
#include "p4l/solver/groups.hpp"
#include "p4l/solver/solver.hpp"

using namespace p4l;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Loads a config and applies key=value overrides; values parse as JSON
/// when they can and are taken as strings otherwise.
ExperimentConfig load_with_overrides(const fs::path& path, const std::vector<std::string>& sets) {
  auto j = nlohmann::json::parse(slurp(path));
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw SchemaError("--set expects key=value, got " + kv);
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    try {
      j[key] = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      j[key] = value;
    }
  }
  return config_from_json(j.dump());
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::size_t replication = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override a config field, key=value (repeatable)");
  app->add_option("-r,--replication", c.replication, "Replication index; its seed is seed + r");
}

std::pair<RbfBasis, std::vector<double>> basis_and_initial(const ExperimentConfig& config,
                                                           const OfflineDataset& ds,
                                                           std::uint64_t seed) {
  RngStream frng(seed, Stream::Features);
  auto basis = fit_rbf_basis(ds.pooled_states(), ds.state_dim(), config.n_features, frng,
                             config.bandwidth_subsample);
  auto extra = cli::draw_initial_states(config, config.extra_initial, RngStream(seed, Stream::Init, 1));
  return {std::move(basis), std::move(extra)};
}

int cmd_collect(const Common& c, const std::string& out) {
  const auto config = load_with_overrides(c.config, c.sets);
  const auto seed = cli::replication_seed(config, c.replication);
  const auto ds = collect_dataset(config.groups, {resolve_behavior(config)}, config.T,
                                  RngStream(seed, Stream::Data));
  save_dataset(ds, out);
  std::printf("collected %zu individuals x %zu steps (seed %llu) -> %s\n", ds.n_individuals(),
              ds.horizon(), static_cast<unsigned long long>(seed), out.c_str());
  return 0;
}

int cmd_train(const Common& c, const std::string& data, const std::string& out,
              const std::string& method, long K, const std::string& history) {
  const auto config = load_with_overrides(c.config, c.sets);
  const auto seed = cli::replication_seed(config, c.replication);
  const auto ds = load_dataset(data);
  auto [basis, extra] = basis_and_initial(config, ds, seed);
  std::size_t k = K < 0 ? config.K : static_cast<std::size_t>(K);
  if (K == 0 && method != "fqi") {
    k = solver::select_num_groups(ds, std::min(config.k_max, ds.n_individuals())).K;
    std::printf("select_num_groups chose K = %zu\n", k);
  }
  std::ostringstream os;
  if (method == "p4l") {
    solver::RunInputs in;
    in.dataset = &ds;
    in.basis = basis;
    in.extra_initial = extra;
    in.K = k;
    const auto res = solver::run_p4l(in, config, seed);
    solver::write_result(os, res);
    if (!history.empty()) {
      std::ostringstream h;
      solver::write_history_csv(h, res.state.history);
      cli::write_file_atomic(history, h.str());
    }
    const auto& last = res.state.history.back();
    std::printf("P4L K=%zu: %zu outer iterations, value %.4f, max Phi_hat %.4f, lambda %.3f\n", k,
                res.state.history.size(), last.value, last.max_phi, last.lambda);
  } else if (method == "fqi") {
    baselines::write_baseline(os, baselines::run_fqi(ds, basis, config.gamma, {config.fqi_iters, config.ridge}));
  } else if (method == "cluster-fqi") {
    baselines::write_baseline(
        os, baselines::run_cluster_fqi(ds, basis, k, config.gamma, {config.fqi_iters, config.ridge}));
  } else {
    throw std::invalid_argument("unknown method " + method);
  }
  cli::write_file_atomic(out, os.str());
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& data, const std::string& model,
             const std::string& out, std::string name, bool greedy) {
  const auto config = load_with_overrides(c.config, c.sets);
  const auto seed = cli::replication_seed(config, c.replication);
  const auto ds = load_dataset(data);
  const std::string text = slurp(model);
  eval::EvalReport rep;
  if (text.rfind("baseline", 0) == 0) {
    std::istringstream is(text);
    const auto pol = baselines::read_baseline(is);
    if (name.empty()) name = baselines::method_name(pol.method);
    rep = cli::evaluate_method(
        name, config, ds, [&](const std::vector<std::size_t>& m) { return cli::baseline_policy(pol, m); },
        c.replication, seed);
  } else {
    std::istringstream is(text);
    const auto res = solver::read_result(is);
    if (name.empty()) name = "P4L-K" + std::to_string(res.latents.K);
    rep = cli::evaluate_method(
        name, config, ds, [&](const std::vector<std::size_t>& m) { return cli::p4l_policy(res, m, greedy); },
        c.replication, seed);
  }
  std::ostringstream os;
  eval::write_values_header(os);
  eval::write_values_rows(os, rep);
  cli::write_file_atomic(out, os.str());
  for (const auto& g : rep.groups)
    std::printf("%s group %s: value %.4f (se %.4f), mean steps %.1f\n", name.c_str(), g.group.c_str(),
                g.mc.value, g.mc.stderr_value, g.mc.mean_steps);
  return 0;
}

int cmd_report(const std::string& values, const std::string& out, const std::string& metric) {
  std::ifstream is(values);
  if (!is) throw Error("cannot open " + values);
  const auto files = cli::emit_outputs(eval::read_values_csv(is), cli::parse_metric(metric), out);
  for (const auto& f : files) std::printf("wrote %s\n", (fs::path(out) / f).c_str());
  return 0;
}

int cmd_experiment(const Common& c, const std::string& out, std::size_t workers) {
  const auto config = load_with_overrides(c.config, c.sets);
  if (workers == 0) workers = cli::worker_count();
  const auto m = cli::run_experiment(config, out, workers);
  std::printf("%s: %zu replications, %zu files, %.1f s wall\n", m.status.c_str(), m.seeds.size(),
              m.files.size(), m.stage_seconds.at("wall"));
  std::fputs(slurp(fs::path(out) / "summary.md").c_str(), stdout);
  return 0;
}

int cmd_check(bool all, const std::vector<std::string>& only, const std::string& work_dir,
              const std::string& config_dir, std::size_t workers) {
  cli::AcceptanceOptions o;
  o.config_dir = config_dir;
  o.work_dir = work_dir;
  o.workers = workers == 0 ? cli::worker_count() : workers;
  if (!only.empty()) o.only = {only.begin(), only.end()};
  else if (!all) o.only = cli::fast_criteria();
  bool ok = true;
  cli::run_acceptance(o, [&](const cli::CriterionResult& r) {
    std::printf("%s\n", cli::format_result(r).c_str());
    std::fflush(stdout);
    ok = ok && r.pass;
  });
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalized pessimistic personalized policy learning"};
  app.require_subcommand(1);

  Common cc, tc, ec, xc;
  std::string collect_out;
  auto* collect = app.add_subcommand("collect", "Roll out the behavior policy into an offline dataset");
  add_common(collect, cc);
  collect->add_option("-o,--out", collect_out, "Dataset file")->required();

  std::string train_data, train_out, method = "p4l", history;
  long K = -1;
  auto* train = app.add_subcommand("train", "Fit P4L or a baseline on a dataset");
  add_common(train, tc);
  train->add_option("-d,--data", train_data, "Dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", train_out, "Checkpoint file")->required();
  train->add_option("-m,--method", method, "p4l, fqi or cluster-fqi")
      ->check(CLI::IsMember({"p4l", "fqi", "cluster-fqi"}));
  train->add_option("-K", K, "Number of groups; 0 selects it from the data (default: config K)");
  train->add_option("--history", history, "Convergence CSV for P4L");

  std::string eval_data, eval_model, eval_out, eval_name, values, report_out, metric = "value";
  bool greedy = false;
  auto* ev = app.add_subcommand("eval", "Monte-Carlo evaluation of a checkpoint, or plots from a values CSV");
  ev->add_option("-c,--config", ec.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  ev->add_option("--set", ec.sets, "Override a config field, key=value (repeatable)");
  ev->add_option("-r,--replication", ec.replication, "Replication index; its seed is seed + r");
  ev->add_option("-d,--data", eval_data, "Dataset the checkpoint was trained on")->check(CLI::ExistingFile);
  ev->add_option("-M,--model", eval_model, "P4L or baseline checkpoint")->check(CLI::ExistingFile);
  ev->add_option("-o,--out", eval_out, "values CSV (checkpoint mode) or output directory (report mode)")
      ->required();
  ev->add_option("--name", eval_name, "Method label in the CSV");
  ev->add_flag("--greedy", greedy, "Evaluate the argmax of the P4L policy");
  ev->add_option("--values", values, "Render boxplots and summary tables from this values CSV")
      ->check(CLI::ExistingFile);
  ev->add_option("--metric", metric, "value or steps")->check(CLI::IsMember({"value", "steps"}));

  std::string exp_out;
  std::size_t workers = 0;
  auto* exp = app.add_subcommand("experiment", "Full replicated comparison into one run directory");
  add_common(exp, xc);
  exp->add_option("-o,--out", exp_out, "Run directory")->required();
  exp->add_option("-w,--workers", workers, "Parallel replications (default: P4L_WORKERS or all cores)");

  bool all = false;
  std::vector<std::string> only;
  std::string work_dir = "p4l_check", config_dir = P4L_CONFIG_DIR;
  std::size_t check_workers = 0;
  auto* check = app.add_subcommand("check", "Run the oracle and property acceptance checks");
  check->add_flag("--all", all, "Include the long experiment-scale criteria");
  check->add_option("--only", only, "Criteria to run, e.g. AC1 AC5")->delimiter(',');
  check->add_option("--work-dir", work_dir, "Scratch directory");
  check->add_option("--config-dir", config_dir, "Directory with simple.json, cartpole.json, smoke.json");
  check->add_option("-w,--workers", check_workers, "Parallel replications");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*collect) return cmd_collect(cc, collect_out);
    if (*train) return cmd_train(tc, train_data, train_out, method, K, history);
    if (*ev) {
      if (!values.empty()) return cmd_report(values, eval_out, metric);
      if (ec.config.empty() || eval_data.empty() || eval_model.empty())
        throw CLI::ValidationError("eval", "needs --config, --data and --model, or --values");
      return cmd_eval(ec, eval_data, eval_model, eval_out, eval_name, greedy);
    }
    if (*exp) return cmd_experiment(xc, exp_out, workers);
    if (*check) return cmd_check(all, only, work_dir, config_dir, check_workers);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const cli::StageError& e) {
    std::fprintf(stderr, "p4l: stage %s failed (seed %llu): %s\n", e.stage().c_str(),
                 static_cast<unsigned long long>(e.seed()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "p4l: %s\n", e.what());
    return 1;
  }
  return 1;
}
