#include <filesystem>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "p4l/cli/experiment.hpp"
#include "p4l/cli/report.hpp"

using namespace p4l;
using namespace p4l::cli;
namespace fs = std::filesystem;

namespace {

eval::ValueRow row(const std::string& method, const std::string& group, std::size_t rep, double value,
                   double weight = 0.5) {
  eval::ValueRow r;
  r.method = method;
  r.group = group;
  r.replication = rep;
  r.weight = weight;
  r.value = value;
  r.mean_steps = 10.0 * value;
  r.n_traj = 10;
  r.horizon = 5;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("p4l_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig smoke() { return load_config(fs::path(P4L_CONFIG_DIR) / "smoke.json"); }

}  // namespace

TEST_CASE("summary cells are the replication mean and standard error") {
  const std::vector<eval::ValueRow> rows = {row("A", "g1", 0, 1.0), row("A", "g1", 1, 3.0),
                                            row("A", "g2", 0, 2.0), row("A", "g2", 1, 2.0),
                                            row("B", "g1", 0, 0.5)};
  const auto s = summarize(rows, Metric::Value);
  CHECK(s.methods == std::vector<std::string>{"A", "B"});
  CHECK(s.groups == std::vector<std::string>{"g1", "g2"});
  CHECK(s.cells.at("A").at("g1").mean == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.cells.at("A").at("g1").stderr_value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.cells.at("A").at("g2").stderr_value == 0.0);
  CHECK(s.cells.at("B").count("g2") == 0);
  // Overall per replication: 0.5*1 + 0.5*2 = 1.5 and 0.5*3 + 0.5*2 = 2.5.
  CHECK(s.overall.at("A").mean == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.overall.at("A").stderr_value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(summarize(rows, Metric::Steps).cells.at("A").at("g1").mean == doctest::Approx(20.0));
}

TEST_CASE("summary CSV round-trips the cell means") {
  std::vector<eval::ValueRow> rows;
  for (std::size_t r = 0; r < 7; ++r) {
    rows.push_back(row("P4L-K3", "a", r, 0.1 * static_cast<double>(r * r) + 1.0 / 3.0));
    rows.push_back(row("FQI", "a", r, std::sqrt(static_cast<double>(r + 2))));
  }
  const auto csv = summary_csv(summarize(rows, Metric::Value));
  std::istringstream is(csv);
  std::string header, line;
  std::getline(is, header);
  CHECK(header == "method,a_mean,a_se,overall_mean,overall_se,replications");
  std::map<std::string, double> want;
  for (const auto& r : rows) want[r.method] += r.value / 7.0;
  while (std::getline(is, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const double mean = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    CHECK(std::abs(mean - want.at(line.substr(0, c1))) < 1e-12);
    CHECK(line.substr(line.rfind(',') + 1) == "7");
  }
}

TEST_CASE("quantile interpolates between order statistics") {
  CHECK(quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({7}, 0.75) == 7.0);
  CHECK_THROWS_AS(quantile({}, 0.5), std::invalid_argument);
}

TEST_CASE("boxplot has one box per method") {
  const std::vector<eval::ValueRow> one = {row("FQI", "a", 0, 1.0)};
  const auto svg = boxplot_svg("a", one, {"FQI"}, Metric::Value);
  CHECK(count(svg, "class=\"box\"") == 1);
  CHECK(svg.rfind("<svg", 0) == 0);
  std::vector<eval::ValueRow> rows;
  for (std::size_t r = 0; r < 10; ++r)
    for (const char* m : {"P4L-K2", "P4L-K3", "FQI"}) rows.push_back(row(m, "a", r, static_cast<double>(r)));
  rows.push_back(row("FQI", "a", 10, 100.0));
  const auto svg3 = boxplot_svg("a", rows, {"P4L-K2", "P4L-K3", "FQI"}, Metric::Value);
  CHECK(count(svg3, "class=\"box\"") == 3);
  CHECK(count(svg3, "data-method=\"FQI\"") == 1);
  CHECK(count(svg3, "<circle") == 1);
}

TEST_CASE("emit_outputs writes nothing for empty input") {
  const auto dir = scratch("empty");
  CHECK_THROWS_AS(emit_outputs({}, Metric::Value, dir), std::invalid_argument);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("emit_outputs names files after the groups") {
  const auto dir = scratch("emit");
  const auto files = emit_outputs({row("FQI", "2/0.85", 0, 1.0), row("FQI", "b", 0, 2.0)}, Metric::Steps, dir);
  CHECK(files == std::vector<std::string>{"boxplot_2_0.85.svg", "boxplot_b.svg", "summary.csv", "summary.md"});
  for (const auto& f : files) CHECK(fs::exists(dir / f));
  CHECK(slurp(dir / "summary.md").find("| FQI | 10.0 (0.0) | 20.0 (0.0) |") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("content_hash matches git blob ids") {
  CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("write_file_atomic replaces content and leaves no temporary") {
  const auto dir = scratch("atomic");
  fs::create_directories(dir);
  write_file_atomic(dir / "x.txt", "one");
  write_file_atomic(dir / "x.txt", "two");
  CHECK(slurp(dir / "x.txt") == "two");
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
  fs::remove_all(dir);
}

TEST_CASE("replication seeds are distinct and reproducible") {
  const auto c = smoke();
  CHECK(replication_seed(c, 0) == replication_seed(c, 0));
  CHECK(replication_seed(c, 0) != replication_seed(c, 1));
}

TEST_CASE("smoke experiment writes a complete, deterministic run directory") {
  const auto c = smoke();
  const auto a = scratch("run_a"), b = scratch("run_b");
  const auto m = run_experiment(c, a, 2);
  CHECK(m.status == "complete");
  CHECK(m.seeds.size() == c.replications);
  for (const char* f : {"manifest.json", "config.json", "values.csv", "summary.csv", "summary.md",
                        "boxplot_a.svg", "boxplot_b.svg", "boxplot_c.svg"})
    CHECK_MESSAGE(fs::exists(a / f), f);
  CHECK_FALSE(fs::exists(a / "FAILED"));
  CHECK(fs::exists(a / "convergence" / "rep0_P4L-K3.csv"));
  CHECK(slurp(a / "manifest.json").find("\"complete\"") != std::string::npos);

  std::ifstream is(a / "values.csv");
  const auto rows = eval::read_values_csv(is);
  std::set<std::string> methods;
  for (const auto& r : rows) methods.insert(r.method);
  CHECK(methods == std::set<std::string>{"P4L-K2", "P4L-K3", "P4L-Auto", "FQI", "ClusterFQI", "Behavior"});
  CHECK(rows.size() == methods.size() * 3 * c.replications);

  run_experiment(c, b, 1);
  CHECK(slurp(a / "values.csv") == slurp(b / "values.csv"));
  CHECK(slurp(a / "summary.csv") == slurp(b / "summary.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("a failing stage leaves a FAILED marker naming stage and seed") {
  auto c = smoke();
  c.replications = 1;
  c.lambda_init = 1e300;
  const auto dir = scratch("fail");
  bool threw = false;
  try {
    run_experiment(c, dir, 1);
  } catch (const StageError& e) {
    threw = true;
    CHECK(e.stage() == "train");
    CHECK(e.seed() == replication_seed(c, 0));
  }
  CHECK(threw);
  REQUIRE(fs::exists(dir / "FAILED"));
  CHECK(slurp(dir / "FAILED").find("train") != std::string::npos);
  CHECK(slurp(dir / "manifest.json").find("\"failed\"") != std::string::npos);
  fs::remove_all(dir);
}
