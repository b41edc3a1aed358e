#include "p4l/cli/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "p4l/cli/experiment.hpp"
#include "p4l/core/text.hpp"

namespace p4l::cli {

std::string metric_name(Metric m) { return m == Metric::Value ? "value" : "steps"; }

Metric parse_metric(const std::string& name) {
  if (name == "value") return Metric::Value;
  if (name == "steps") return Metric::Steps;
  throw std::invalid_argument("metric must be 'value' or 'steps'");
}

double metric_of(const eval::ValueRow& row, Metric m) {
  return m == Metric::Value ? row.value : row.mean_steps;
}

namespace {

SummaryCell cell_of(const std::vector<double>& xs) {
  SummaryCell c;
  c.n = xs.size();
  double sum = 0.0;
  for (double x : xs) sum += x;
  c.mean = sum / static_cast<double>(c.n);
  if (c.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - c.mean) * (x - c.mean);
    c.stderr_value = std::sqrt(ss / static_cast<double>(c.n - 1) / static_cast<double>(c.n));
  }
  return c;
}

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

void push_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out;
}

}  // namespace

Summary summarize(const std::vector<eval::ValueRow>& rows, Metric metric) {
  if (rows.empty()) throw std::invalid_argument("summarize: no rows");
  Summary s;
  s.metric = metric;
  std::map<std::string, std::map<std::string, std::vector<double>>> xs;
  std::map<std::string, std::map<std::size_t, double>> overall;
  for (const auto& r : rows) {
    push_unique(s.methods, r.method);
    push_unique(s.groups, r.group);
    xs[r.method][r.group].push_back(metric_of(r, metric));
    overall[r.method][r.replication] += r.weight * metric_of(r, metric);
  }
  for (const auto& m : s.methods) {
    for (const auto& g : s.groups) {
      const auto it = xs[m].find(g);
      if (it != xs[m].end()) s.cells[m][g] = cell_of(it->second);
    }
    std::vector<double> o;
    for (const auto& [rep, v] : overall[m]) o.push_back(v);
    s.overall[m] = cell_of(o);
  }
  return s;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string boxplot_svg(const std::string& group, const std::vector<eval::ValueRow>& rows,
                        const std::vector<std::string>& methods, Metric metric) {
  std::map<std::string, std::vector<double>> xs;
  for (const auto& r : rows)
    if (r.group == group) xs[r.method].push_back(metric_of(r, metric));
  std::vector<std::string> shown;
  for (const auto& m : methods)
    if (xs.count(m)) shown.push_back(m);
  if (shown.empty()) throw std::invalid_argument("boxplot_svg: no rows for group " + group);

  double lo = 1e300, hi = -1e300;
  for (const auto& m : shown)
    for (double x : xs[m]) lo = std::min(lo, x), hi = std::max(hi, x);
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double left = 70, top = 40, plot_h = 300, box_w = 40, slot = 80;
  const double width = left + slot * static_cast<double>(shown.size()) + 20;
  const double height = top + plot_h + 90;
  auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width, 0) +
                    "\" height=\"" + fmt(height, 0) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(width / 2, 1) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         xml_escape(group) + "</text>\n";
  svg += "<line x1=\"" + fmt(left, 1) + "\" y1=\"" + fmt(top, 1) + "\" x2=\"" + fmt(left, 1) +
         "\" y2=\"" + fmt(top + plot_h, 1) + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const double y = y_of(v);
    svg += "<line x1=\"" + fmt(left - 4, 1) + "\" y1=\"" + fmt(y, 1) + "\" x2=\"" + fmt(left, 1) +
           "\" y2=\"" + fmt(y, 1) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + fmt(left - 6, 1) + "\" y=\"" + fmt(y + 4, 1) + "\" text-anchor=\"end\">" +
           fmt(v, 3) + "</text>\n";
  }
  svg += "<text x=\"15\" y=\"" + fmt(top + plot_h / 2, 1) + "\" transform=\"rotate(-90 15 " +
         fmt(top + plot_h / 2, 1) + ")\" text-anchor=\"middle\">" + metric_name(metric) + "</text>\n";

  for (std::size_t k = 0; k < shown.size(); ++k) {
    const auto& v = xs[shown[k]];
    const double q1 = quantile(v, 0.25), med = quantile(v, 0.5), q3 = quantile(v, 0.75);
    const double iqr = q3 - q1;
    double wlo = q3, whi = q1;
    for (double x : v) {
      if (x >= q1 - 1.5 * iqr) wlo = std::min(wlo, x);
      if (x <= q3 + 1.5 * iqr) whi = std::max(whi, x);
    }
    const double cx = left + slot * (static_cast<double>(k) + 0.5);
    const double x0 = cx - box_w / 2;
    svg += "<g data-method=\"" + xml_escape(shown[k]) + "\">\n";
    svg += "<line x1=\"" + fmt(cx, 1) + "\" y1=\"" + fmt(y_of(whi), 1) + "\" x2=\"" + fmt(cx, 1) +
           "\" y2=\"" + fmt(y_of(wlo), 1) + "\" stroke=\"black\"/>\n";
    svg += "<rect class=\"box\" x=\"" + fmt(x0, 1) + "\" y=\"" + fmt(y_of(q3), 1) + "\" width=\"" +
           fmt(box_w, 1) + "\" height=\"" + fmt(std::max(y_of(q1) - y_of(q3), 0.5), 1) +
           "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(x0, 1) + "\" y1=\"" + fmt(y_of(med), 1) + "\" x2=\"" +
           fmt(x0 + box_w, 1) + "\" y2=\"" + fmt(y_of(med), 1) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double x : v)
      if (x < wlo || x > whi)
        svg += "<circle cx=\"" + fmt(cx, 1) + "\" cy=\"" + fmt(y_of(x), 1) + "\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>\n";
    const double ly = top + plot_h + 14;
    svg += "<text x=\"" + fmt(cx, 1) + "\" y=\"" + fmt(ly, 1) + "\" text-anchor=\"end\" transform=\"rotate(-40 " +
           fmt(cx, 1) + " " + fmt(ly, 1) + ")\">" + xml_escape(shown[k]) + "</text>\n";
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string summary_csv(const Summary& s) {
  std::string out = "method";
  for (const auto& g : s.groups) out += "," + g + "_mean," + g + "_se";
  out += ",overall_mean,overall_se,replications\n";
  for (const auto& m : s.methods) {
    out += m;
    for (const auto& g : s.groups) {
      const auto it = s.cells.at(m).find(g);
      if (it == s.cells.at(m).end()) {
        out += ",,";
        continue;
      }
      out += ',';
      text::append_real(out, it->second.mean);
      out += ',';
      text::append_real(out, it->second.stderr_value);
    }
    const SummaryCell& o = s.overall.at(m);
    out += ',';
    text::append_real(out, o.mean);
    out += ',';
    text::append_real(out, o.stderr_value);
    out += ',' + std::to_string(o.n) + '\n';
  }
  return out;
}

std::string summary_markdown(const Summary& s) {
  const int digits = s.metric == Metric::Steps ? 1 : 4;
  std::string out = "Mean " + metric_name(s.metric) +
                    " of learned policies over replications; standard errors in parentheses.\n\n| method |";
  for (const auto& g : s.groups) out += " " + g + " |";
  out += " overall |\n|---|";
  for (std::size_t k = 0; k <= s.groups.size(); ++k) out += "---|";
  out += '\n';
  for (const auto& m : s.methods) {
    out += "| " + m + " |";
    for (const auto& g : s.groups) {
      const auto it = s.cells.at(m).find(g);
      out += it == s.cells.at(m).end()
                 ? std::string(" |")
                 : " " + fmt(it->second.mean, digits) + " (" + fmt(it->second.stderr_value, digits) + ") |";
    }
    const SummaryCell& o = s.overall.at(m);
    out += " " + fmt(o.mean, digits) + " (" + fmt(o.stderr_value, digits) + ") |\n";
  }
  return out;
}

std::vector<std::string> emit_outputs(const std::vector<eval::ValueRow>& rows, Metric metric,
                                      const std::filesystem::path& out_dir) {
  const Summary s = summarize(rows, metric);
  std::vector<std::pair<std::string, std::string>> files;
  std::set<std::string> names;
  for (const auto& g : s.groups) {
    std::string name = "boxplot_" + file_safe(g) + ".svg";
    if (!names.insert(name).second) throw std::invalid_argument("emit_outputs: group names collide: " + g);
    files.emplace_back(name, boxplot_svg(g, rows, s.methods, metric));
  }
  files.emplace_back("summary.csv", summary_csv(s));
  files.emplace_back("summary.md", summary_markdown(s));
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  for (const auto& [name, text] : files) {
    write_file_atomic(out_dir / name, text);
    written.push_back(name);
  }
  return written;
}

}  // namespace p4l::cli
