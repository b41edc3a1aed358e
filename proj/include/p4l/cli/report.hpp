#pragma once

// Plots and summary tables rendered from a values CSV alone.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "p4l/eval/eval.hpp"

namespace p4l::cli {

/// Discounted value, or undiscounted step count for bounded-episode envs.
enum class Metric { Value, Steps };

std::string metric_name(Metric m);
Metric parse_metric(const std::string& name);
double metric_of(const eval::ValueRow& row, Metric m);

struct SummaryCell {
  double mean = 0.0;
  double stderr_value = 0.0;
  std::size_t n = 0;
};

struct Summary {
  Metric metric = Metric::Value;
  /// Order of first appearance in the CSV.
  std::vector<std::string> methods;
  std::vector<std::string> groups;
  /// cells[method][group]: mean and standard error over replications.
  std::map<std::string, std::map<std::string, SummaryCell>> cells;
  /// Weighted sum over groups per replication, then mean and standard error.
  std::map<std::string, SummaryCell> overall;
};

/// Throws std::invalid_argument when `rows` is empty.
Summary summarize(const std::vector<eval::ValueRow>& rows, Metric metric);

/// Quartiles by linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

/// One box per method for one group; whiskers at 1.5 IQR, outliers as dots.
std::string boxplot_svg(const std::string& group, const std::vector<eval::ValueRow>& rows,
                        const std::vector<std::string>& methods, Metric metric);

/// "mean (se)" table, one row per method and one column per group plus overall.
std::string summary_csv(const Summary& summary);
std::string summary_markdown(const Summary& summary);

/// Writes boxplot_<group>.svg, summary.csv and summary.md into `out_dir`.
/// Every file is rendered before any is written, so a malformed input
/// leaves no partial outputs. Returns the written file names.
std::vector<std::string> emit_outputs(const std::vector<eval::ValueRow>& rows, Metric metric,
                                      const std::filesystem::path& out_dir);

}  // namespace p4l::cli
