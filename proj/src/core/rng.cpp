#include "p4l/core/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace p4l {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {
std::uint64_t combine(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}
}  // namespace

RngStream::RngStream(std::uint64_t seed, Stream purpose, std::uint64_t index)
    : RngStream(seed, purpose,
                combine(combine(splitmix64(seed), static_cast<std::uint64_t>(purpose)),
                        index),
                0) {}

RngStream::RngStream(std::uint64_t seed, Stream purpose, std::uint64_t key, int)
    : seed_(seed), purpose_(purpose), key_(key), engine_(key) {}

RngStream RngStream::fork(std::uint64_t index) const {
  return RngStream(seed_, purpose_, combine(key_, index + 1), 0);
}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

}  // namespace p4l
