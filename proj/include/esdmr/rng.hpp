#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace esdmr {

/// Deterministic PRNG. Wraps std::mt19937_64 (whose output sequence is fixed
/// by the standard) and derives all distributions itself, so the same seed
/// yields the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n), n >= 1. Rejection-free modulo is acceptable
  /// here (n is tiny next to 2^64, bias is untestable).
  std::uint64_t uniform_index(std::uint64_t n) { return engine_() % n; }

  /// Standard normal via Box-Muller (one value per call, cached pair).
  double normal();

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  /// Independent child stream (e.g. one per epoch) derived by SplitMix64.
  Rng fork(std::uint64_t stream_id) const;

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace esdmr
