#include "p4l/features/rbf.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include "p4l/core/cluster.hpp"
#include "p4l/core/dataset.hpp"
#include "p4l/core/error.hpp"
#include "p4l/core/text.hpp"
#include "p4l/kernels.hpp"

namespace p4l {

void validate(const RbfBasis& b) {
  if (b.n_centers < 1 || b.state_dim < 1) throw std::invalid_argument("rbf basis: empty");
  if (b.centers.size() != b.n_centers * b.state_dim)
    throw std::invalid_argument("rbf basis: centers must be J x d");
  if (!(b.bandwidth > 0.0) || !std::isfinite(b.bandwidth))
    throw std::invalid_argument("rbf basis: bandwidth must be positive and finite");
  for (double c : b.centers)
    if (!std::isfinite(c)) throw std::invalid_argument("rbf basis: non-finite center");
}

double median_pairwise_distance(const std::vector<double>& states, std::size_t n, std::size_t d) {
  if (n < 2) throw std::invalid_argument("median_pairwise_distance: need two points");
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist.push_back(std::sqrt(
          kernels::squared_distance({states.data() + i * d, d}, {states.data() + j * d, d})));
  const std::size_t m = dist.size();
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(m / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  if (m % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(dist.begin(), mid);
  return 0.5 * (lower + upper);
}

RbfBasis fit_rbf_basis(const std::vector<double>& states, std::size_t d, std::size_t J,
                       RngStream& rng, std::size_t subsample_cap) {
  if (d == 0 || J == 0) throw std::invalid_argument("fit_rbf_basis: d and J must be >= 1");
  if (states.size() % d != 0) throw std::invalid_argument("fit_rbf_basis: ragged state matrix");
  const std::size_t n = states.size() / d;
  std::set<std::vector<double>> distinct;
  for (std::size_t i = 0; i < n && distinct.size() < std::max<std::size_t>(J, 2); ++i)
    distinct.emplace(states.begin() + i * d, states.begin() + (i + 1) * d);
  if (distinct.size() < J || distinct.size() < 2)
    throw std::invalid_argument("fit_rbf_basis: fewer distinct states than features (" +
                                std::to_string(distinct.size()) + " < " + std::to_string(J) +
                                ")");

  RbfBasis b;
  b.n_centers = J;
  b.state_dim = d;
  RngStream km_rng = rng.fork(1);
  b.centers = kmeans(states, n, d, J, km_rng).centroids;

  RngStream sub_rng = rng.fork(2);
  std::vector<double> sub;
  std::size_t m = n;
  if (n > subsample_cap) {
    m = subsample_cap;
    sub.reserve(m * d);
    for (std::size_t row : sample_minibatch(n, m, sub_rng))
      sub.insert(sub.end(), states.begin() + row * d, states.begin() + (row + 1) * d);
  }
  b.bandwidth = median_pairwise_distance(n > subsample_cap ? sub : states, m, d);
  if (!(b.bandwidth > 0.0))
    throw std::invalid_argument("fit_rbf_basis: median pairwise distance is zero");
  return b;
}

void featurize(const RbfBasis& b, std::span<const double> s, std::span<double> out) {
  if (s.size() != b.state_dim) throw std::invalid_argument("featurize: state dimension mismatch");
  if (out.size() != b.n_centers) throw std::invalid_argument("featurize: output size mismatch");
  kernels::rbf_row(b.centers, b.n_centers, s, 1.0 / (2.0 * b.bandwidth * b.bandwidth), out);
}

std::vector<double> featurize(const RbfBasis& b, std::span<const double> s) {
  std::vector<double> out(b.n_centers);
  featurize(b, s, out);
  return out;
}

std::vector<double> featurize_jacobian(const RbfBasis& b, std::span<const double> s) {
  const std::vector<double> phi = featurize(b, s);
  const std::size_t d = b.state_dim;
  const double inv_h2 = 1.0 / (b.bandwidth * b.bandwidth);
  std::vector<double> jac(b.n_centers * d);
  for (std::size_t j = 0; j < b.n_centers; ++j)
    for (std::size_t k = 0; k < d; ++k)
      jac[j * d + k] = -(s[k] - b.centers[j * d + k]) * inv_h2 * phi[j];
  return jac;
}

void write_basis(std::ostream& os, const RbfBasis& b) {
  std::string buf = "rbf " + std::to_string(b.n_centers) + " " + std::to_string(b.state_dim) +
                    " " + text::format_real(b.bandwidth) + "\n";
  for (std::size_t j = 0; j < b.n_centers; ++j) {
    for (std::size_t k = 0; k < b.state_dim; ++k) {
      if (k) buf += ' ';
      text::append_real(buf, b.centers[j * b.state_dim + k]);
    }
    buf += '\n';
  }
  os << buf;
}

RbfBasis read_basis(std::istream& is, std::size_t& line) {
  std::string l;
  if (!std::getline(is, l)) throw ParseError("missing rbf header", line + 1);
  ++line;
  const auto head = text::split(text::trim(l), ' ');
  if (head.size() != 4 || head[0] != "rbf") throw ParseError("malformed rbf header", line);
  RbfBasis b;
  b.n_centers = text::parse_int<std::size_t>(head[1], line);
  b.state_dim = text::parse_int<std::size_t>(head[2], line);
  b.bandwidth = text::parse_real(head[3], line);
  b.centers.reserve(b.n_centers * b.state_dim);
  for (std::size_t j = 0; j < b.n_centers; ++j) {
    if (!std::getline(is, l)) throw ParseError("truncated rbf centers", line + 1);
    ++line;
    const auto f = text::split(text::trim(l), ' ');
    if (f.size() != b.state_dim) throw ParseError("rbf center has wrong dimension", line);
    for (auto v : f) b.centers.push_back(text::parse_real(v, line));
  }
  try {
    validate(b);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return b;
}

}  // namespace p4l
