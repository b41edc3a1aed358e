#pragma once

// Acceptance criteria AC1..AC10 as executable checks.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

namespace p4l::cli {

struct CriterionResult {
  std::string id;
  std::string title;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  /// Directory holding simple.json, cartpole.json and smoke.json.
  std::filesystem::path config_dir;
  /// Scratch space for run directories.
  std::filesystem::path work_dir;
  std::size_t workers = 1;
  /// Criteria to run ("AC1".."AC10"); empty runs all.
  std::set<std::string> only;
};

/// Ids of the criteria that finish in well under a minute.
std::set<std::string> fast_criteria();

/// Runs the selected criteria in order, reporting each as it finishes.
std::vector<CriterionResult> run_acceptance(
    const AcceptanceOptions& options,
    const std::function<void(const CriterionResult&)>& on_result = {});

/// "AC1 PASS <title> (<seconds>s): <detail>"
std::string format_result(const CriterionResult& r);

}  // namespace p4l::cli
