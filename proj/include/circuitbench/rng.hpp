#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace circuitbench {

/// Deterministic random source used by every experiment.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard and therefore identical on every conforming platform. The
/// standard distributions are *not* portable, so all conversions to
/// floating point and bounded integers are implemented here:
///
///   uniform01()        = (next() >> 11) * 2^-53
///   uniform_index(n)   = rejection sampling on next() against the largest
///                        multiple of n below 2^64
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform01();

  /// Uniform float in [lo, hi).
  float uniform(float lo, float hi);

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  bool bernoulli(double p) { return uniform01() < p; }

  /// Fisher-Yates shuffle driven by uniform_index.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_index(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// 64-bit FNV-1a hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Per-experiment seed: mix64(global_seed ^ fnv1a64(name)).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view name) noexcept;

/// Seed for the i-th item of a named stream.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view name,
                          std::uint64_t index) noexcept;

}  // namespace circuitbench
