#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace grf {

// Counter-based generator: output k is a SplitMix64 finalizer applied to
// seed + k * golden gamma, so streams are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n);
  double normal();
  // Normal(mean, stddev) resampled until within mean +- bound * stddev.
  double truncated_normal(double mean, double stddev, double bound = 2.0);

  // Independent deterministic stream keyed by label; does not advance *this.
  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace grf
