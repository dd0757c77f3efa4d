#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>

namespace vip {

/// Seeded random source shared by every stochastic component.
///
/// Distributions are implemented here rather than through <random>'s
/// distribution objects, whose output is implementation-defined; trial logs
/// must replay bit-exactly on any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n);

  /// Independent stream seed for (seed, stream), via splitmix64 mixing.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace vip
