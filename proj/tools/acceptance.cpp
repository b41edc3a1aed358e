#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "p4l/cli/acceptance.hpp"
#include "p4l/cli/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria AC1..AC10, one line each"};
  std::string work_dir = "acceptance_runs", config_dir = P4L_CONFIG_DIR;
  std::vector<std::string> only;
  std::size_t workers = 0;
  app.add_option("--work-dir", work_dir, "Scratch directory");
  app.add_option("--config-dir", config_dir, "Directory with simple.json, cartpole.json, smoke.json");
  app.add_option("--only", only, "Criteria to run, e.g. AC1,AC5")->delimiter(',');
  app.add_option("-w,--workers", workers, "Parallel replications (default: P4L_WORKERS or all cores)");
  CLI11_PARSE(app, argc, argv);

  p4l::cli::AcceptanceOptions o;
  o.config_dir = config_dir;
  o.work_dir = work_dir;
  o.workers = workers == 0 ? p4l::cli::worker_count() : workers;
  o.only = {only.begin(), only.end()};
  std::size_t passed = 0, total = 0;
  p4l::cli::run_acceptance(o, [&](const p4l::cli::CriterionResult& r) {
    std::printf("%s\n", p4l::cli::format_result(r).c_str());
    std::fflush(stdout);
    ++total;
    if (r.pass) ++passed;
  });
  std::printf("%zu/%zu criteria passed\n", passed, total);
  return passed == total ? 0 : 1;
}
