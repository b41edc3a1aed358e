#include "p4l/core/dataset.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "p4l/core/error.hpp"
#include "p4l/core/text.hpp"

namespace p4l {

OfflineDataset::OfflineDataset(std::size_t n_individuals, std::size_t horizon,
                               std::size_t state_dim, std::size_t n_actions,
                               std::vector<Transition> transitions,
                               std::vector<int> groups)
    : n_individuals_(n_individuals),
      horizon_(horizon),
      state_dim_(state_dim),
      n_actions_(n_actions),
      transitions_(std::move(transitions)),
      groups_(std::move(groups)) {
  if (n_individuals_ == 0 || horizon_ == 0)
    throw SchemaError("dataset needs at least one individual and T >= 1");
  if (state_dim_ == 0 || n_actions_ == 0)
    throw SchemaError("dataset needs d_s >= 1 and at least one action");
  if (transitions_.size() != n_individuals_ * horizon_)
    throw SchemaError("unbalanced dataset: expected " +
                      std::to_string(n_individuals_ * horizon_) +
                      " transitions, got " + std::to_string(transitions_.size()));
  if (!groups_.empty() && groups_.size() != n_individuals_)
    throw SchemaError("group metadata must have one entry per individual");

  for (std::size_t row = 0; row < transitions_.size(); ++row) {
    const Transition& tr = transitions_[row];
    const std::size_t i = row / horizon_;
    const std::size_t t = row % horizon_;
    const std::string where =
        " at row " + std::to_string(row) + " (individual " + std::to_string(i) +
        ", t " + std::to_string(t) + ")";
    if (tr.individual != i || tr.t != t)
      throw SchemaError("transitions must be individual-major with t = 0..T-1" + where);
    if (tr.state.size() != state_dim_ || tr.next_state.size() != state_dim_)
      throw SchemaError("state dimension mismatch" + where);
    if (tr.action < 0 || static_cast<std::size_t>(tr.action) >= n_actions_)
      throw SchemaError("action index out of range" + where);
    if (t > 0 && transitions_[row - 1].next_state != tr.state)
      throw SchemaError("next_state at t-1 differs from state at t" + where);
  }
}

const Transition& OfflineDataset::at(std::size_t individual, std::size_t t) const {
  if (individual >= n_individuals_ || t >= horizon_)
    throw std::out_of_range("OfflineDataset::at");
  return transitions_[individual * horizon_ + t];
}

std::span<const Transition> OfflineDataset::individual(std::size_t i) const {
  if (i >= n_individuals_) throw std::out_of_range("OfflineDataset::individual");
  return std::span<const Transition>(transitions_).subspan(i * horizon_, horizon_);
}

std::vector<double> OfflineDataset::pooled_states() const {
  std::vector<double> out;
  out.reserve((transitions_.size() + n_individuals_) * state_dim_);
  for (std::size_t i = 0; i < n_individuals_; ++i) {
    for (const Transition& tr : individual(i))
      out.insert(out.end(), tr.state.begin(), tr.state.end());
    const auto& last = transitions_[(i + 1) * horizon_ - 1].next_state;
    out.insert(out.end(), last.begin(), last.end());
  }
  return out;
}

std::vector<double> OfflineDataset::initial_states() const {
  std::vector<double> out;
  out.reserve(n_individuals_ * state_dim_);
  for (std::size_t i = 0; i < n_individuals_; ++i) {
    const auto& s = transitions_[i * horizon_].state;
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

std::vector<std::size_t> sample_minibatch(std::size_t n_rows, std::size_t n0,
                                          RngStream& rng) {
  if (n0 < 1 || n0 > n_rows)
    throw std::invalid_argument("minibatch size must satisfy 1 <= n0 <= N*T");
  std::vector<std::size_t> idx(n_rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < n0; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.below(n_rows - k));
    std::swap(idx[k], idx[j]);
  }
  idx.resize(n0);
  return idx;
}

std::vector<Transition> sample_minibatch(const OfflineDataset& dataset,
                                         std::size_t n0, RngStream& rng) {
  std::vector<Transition> out;
  for (std::size_t row : sample_minibatch(dataset.size(), n0, rng))
    out.push_back(dataset[row]);
  return out;
}

void save_dataset(const OfflineDataset& dataset, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open dataset file for writing: " + path.string());
  const std::size_t d = dataset.state_dim();
  std::string buf = "n_individuals,T,d_s,n_actions\n";
  buf += std::to_string(dataset.n_individuals()) + "," +
         std::to_string(dataset.horizon()) + "," + std::to_string(d) + "," +
         std::to_string(dataset.n_actions()) + "\n";
  buf += "individual,t,group";
  for (std::size_t k = 0; k < d; ++k) buf += ",s" + std::to_string(k);
  buf += ",action,reward";
  for (std::size_t k = 0; k < d; ++k) buf += ",ns" + std::to_string(k);
  buf += "\n";
  for (const Transition& tr : dataset.transitions()) {
    buf += std::to_string(tr.individual);
    buf += ',';
    buf += std::to_string(tr.t);
    buf += ',';
    buf += std::to_string(dataset.has_groups() ? dataset.groups()[tr.individual] : -1);
    for (double v : tr.state) {
      buf += ',';
      text::append_real(buf, v);
    }
    buf += ',';
    buf += std::to_string(tr.action);
    buf += ',';
    text::append_real(buf, tr.reward);
    for (double v : tr.next_state) {
      buf += ',';
      text::append_real(buf, v);
    }
    buf += '\n';
    if (buf.size() > (1u << 20)) {
      os << buf;
      buf.clear();
    }
  }
  os << buf;
  if (!os) throw Error("failed writing dataset file: " + path.string());
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset file: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) throw ParseError(std::string("missing ") + what, lineno + 1);
    ++lineno;
  };

  next_line("header");
  if (text::trim(line) != "n_individuals,T,d_s,n_actions")
    throw ParseError("unrecognized dataset header", lineno);
  next_line("shape row");
  auto shape = text::split(text::trim(line));
  if (shape.size() != 4) throw ParseError("shape row needs 4 fields", lineno);
  const auto n = text::parse_int<std::size_t>(shape[0], lineno);
  const auto horizon = text::parse_int<std::size_t>(shape[1], lineno);
  const auto d = text::parse_int<std::size_t>(shape[2], lineno);
  const auto n_actions = text::parse_int<std::size_t>(shape[3], lineno);

  next_line("column row");
  const auto columns = text::split(text::trim(line));
  const std::size_t n_cols = 3 + 2 * d + 2;
  if (columns.size() != n_cols)
    throw SchemaError("column header has " + std::to_string(columns.size()) +
                      " fields but d_s=" + std::to_string(d) + " needs " +
                      std::to_string(n_cols));

  std::vector<Transition> rows;
  rows.reserve(n * horizon);
  std::vector<int> groups(n, -1);
  bool any_group = false;
  while (std::getline(is, line)) {
    ++lineno;
    const auto body = text::trim(line);
    if (body.empty()) continue;
    const auto f = text::split(body);
    if (f.size() != n_cols)
      throw ParseError("expected " + std::to_string(n_cols) + " fields, got " +
                           std::to_string(f.size()),
                       lineno);
    Transition tr;
    tr.individual = text::parse_int<std::size_t>(f[0], lineno);
    tr.t = text::parse_int<std::size_t>(f[1], lineno);
    const int g = text::parse_int<int>(f[2], lineno);
    tr.state.resize(d);
    tr.next_state.resize(d);
    for (std::size_t k = 0; k < d; ++k) tr.state[k] = text::parse_real(f[3 + k], lineno);
    tr.action = text::parse_int<int>(f[3 + d], lineno);
    tr.reward = text::parse_real(f[4 + d], lineno);
    for (std::size_t k = 0; k < d; ++k)
      tr.next_state[k] = text::parse_real(f[5 + d + k], lineno);
    if (tr.individual >= n)
      throw SchemaError("individual index out of range at line " + std::to_string(lineno));
    if (g >= 0) {
      groups[tr.individual] = g;
      any_group = true;
    }
    rows.push_back(std::move(tr));
  }
  if (rows.size() != n * horizon)
    throw ParseError("truncated dataset: expected " + std::to_string(n * horizon) +
                         " rows, found " + std::to_string(rows.size()),
                     lineno);
  return OfflineDataset(n, horizon, d, n_actions, std::move(rows),
                        any_group ? std::move(groups) : std::vector<int>{});
}

}  // namespace p4l
