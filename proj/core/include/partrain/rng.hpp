#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace partrain {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of sub-model `index` given the run's master seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return master ^ index;
}

/// Master seed of repetition `r`. Repetitions differ above bit 32, so the
/// derived seeds of different repetitions never coincide for K < 2^32.
constexpr std::uint64_t repetition_seed(std::uint64_t base, std::uint64_t r) {
  return base + (r << 32);
}

/// Explicit per-instance random stream. The conversions from raw engine
/// output are written out here so that streams are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  double normal();

  /// True with probability `p`.
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace partrain
