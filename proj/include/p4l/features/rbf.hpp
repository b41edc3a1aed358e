#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "p4l/core/rng.hpp"

namespace p4l {

/// Gaussian radial basis: phi_j(s) = exp(-|s - c_j|^2 / (2 h^2)).
struct RbfBasis {
  std::vector<double> centers;  // J x d, row-major
  std::size_t n_centers = 0;
  std::size_t state_dim = 0;
  double bandwidth = 1.0;

  std::size_t size() const noexcept { return n_centers; }
  bool operator==(const RbfBasis&) const = default;
};

/// Throws std::invalid_argument if the basis is malformed.
void validate(const RbfBasis& basis);

/// Centers are the K-means(J) means of the pooled states (n x d, row-major);
/// the bandwidth is the median pairwise Euclidean distance over a uniform
/// subsample of at most `subsample_cap` states. Throws std::invalid_argument
/// when there are fewer than J distinct states or the median distance is 0.
RbfBasis fit_rbf_basis(const std::vector<double>& states, std::size_t d, std::size_t J,
                       RngStream& rng, std::size_t subsample_cap = 2000);

/// Writes phi(s) into `out` (size J).
void featurize(const RbfBasis& basis, std::span<const double> s, std::span<double> out);
std::vector<double> featurize(const RbfBasis& basis, std::span<const double> s);

/// Jacobian d phi / d s as J x d, row-major.
std::vector<double> featurize_jacobian(const RbfBasis& basis, std::span<const double> s);

/// Median of the n(n-1)/2 pairwise distances of the given rows.
double median_pairwise_distance(const std::vector<double>& states, std::size_t n, std::size_t d);

void write_basis(std::ostream& os, const RbfBasis& basis);
/// Reads what write_basis wrote; `line` tracks the 1-based line counter.
RbfBasis read_basis(std::istream& is, std::size_t& line);

}  // namespace p4l
