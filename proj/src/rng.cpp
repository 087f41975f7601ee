#include "grformer/rng.hpp"

#include <cmath>
#include <numbers>

#include "grformer/errors.hpp"

namespace grf {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * kGamma);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ContractError("Rng::below: n must be positive");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

double Rng::normal() {
  // Box-Muller, one draw per call; u1 in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double mean, double stddev, double bound) {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= bound) return mean + stddev * z;
  }
}

Rng Rng::split(std::string_view label) const {
  return Rng(mix64(seed_ ^ mix64(fnv1a64(label))));
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(mix64(seed_ ^ mix64(index * kGamma + 1)));
}

}  // namespace grf
