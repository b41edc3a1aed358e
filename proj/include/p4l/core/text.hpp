#pragma once

// Small helpers shared by the text file formats: shortest round-trip real
// formatting and strict field parsing.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "p4l/core/error.hpp"

namespace p4l::text {

inline void append_real(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline std::string format_real(double v) {
  std::string s;
  append_real(s, v);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline double parse_real(std::string_view s, std::size_t line) {
  s = trim(s);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ParseError("invalid real '" + std::string(s) + "'", line);
  return v;
}

template <class Int>
Int parse_int(std::string_view s, std::size_t line) {
  s = trim(s);
  Int v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ParseError("invalid integer '" + std::string(s) + "'", line);
  return v;
}

/// "params <tag> <n>" followed by the values, eight per line.
inline void write_block(std::string& buf, std::string_view tag, const std::vector<double>& v) {
  buf += "params ";
  buf += tag;
  buf += ' ';
  buf += std::to_string(v.size());
  buf += '\n';
  for (std::size_t k = 0; k < v.size(); ++k) {
    append_real(buf, v[k]);
    buf += (k + 1) % 8 == 0 || k + 1 == v.size() ? '\n' : ' ';
  }
}

inline std::vector<double> read_block(std::istream& is, std::size_t& line, std::string_view tag) {
  const std::string t(tag);
  std::string l;
  if (!std::getline(is, l)) throw ParseError("missing params " + t, line + 1);
  ++line;
  const auto head = split(trim(l), ' ');
  if (head.size() != 3 || head[0] != "params" || head[1] != tag)
    throw ParseError("expected 'params " + t + " <n>'", line);
  const auto n = parse_int<std::size_t>(head[2], line);
  std::vector<double> v;
  v.reserve(n);
  while (v.size() < n) {
    if (!std::getline(is, l)) throw ParseError("truncated params " + t, line + 1);
    ++line;
    for (auto f : split(trim(l), ' ')) {
      if (v.size() == n) throw ParseError("too many parameter values", line);
      v.push_back(parse_real(f, line));
    }
  }
  return v;
}

}  // namespace p4l::text
