#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace p4l {

/// Purpose tags for independent random streams derived from one root seed.
enum class Stream : std::uint64_t {
  Data = 1,
  Minibatch = 2,
  Init = 3,
  Eval = 4,
  Features = 5,
  Clustering = 6,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Deterministic random stream. Draws are a pure function of
/// (seed, purpose, index path, draw position); forked children never overlap
/// with their parent's sequence in practice.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, Stream purpose, std::uint64_t index = 0);

  /// Child stream keyed by `index`, independent of how far this stream has
  /// been consumed.
  RngStream fork(std::uint64_t index) const;

  std::uint64_t seed() const noexcept { return seed_; }
  Stream purpose() const noexcept { return purpose_; }
  std::uint64_t key() const noexcept { return key_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal by Box-Muller; consumes two uniforms, keeps no cache.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  RngStream(std::uint64_t seed, Stream purpose, std::uint64_t key, int);

  std::uint64_t seed_;
  Stream purpose_;
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

}  // namespace p4l
