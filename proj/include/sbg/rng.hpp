#pragma once

#include <cmath>
#include <cstdint>

namespace sbg {

/// SplitMix64 finalizer.  Statistically strong enough to serve as the core of
/// a counter-based generator.
inline uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

/// Counter-based pseudo-random stream: output i is mix64 of (seed, i), so
/// streams can be derived, replayed and split without shared state.
/// Deterministic across platforms (no std::random distributions involved).
class Prng {
 public:
  explicit Prng(uint64_t seed) : seed_(mix64(seed)) {}

  uint64_t u64() { return hash_combine(seed_, ctr_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1); safe as a log() argument.
  double uniform_pos() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    const uint64_t lim = n * (UINT64_MAX / n);
    uint64_t x;
    do {
      x = u64();
    } while (x >= lim);
    return x % n;
  }

  /// Independent child stream; derivation does not consume parent output.
  Prng derive(uint64_t tag) const { return Prng(hash_combine(seed_, ~tag)); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t ctr_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Hierarchical seed tags used by the CLI and the SMC driver, public so tests
/// can reproduce any stage of a run in isolation.
namespace seed_tag {
inline constexpr uint64_t data = 1;
inline constexpr uint64_t train = 2;
inline constexpr uint64_t proposal = 3;
inline constexpr uint64_t anneal = 4;
inline constexpr uint64_t resample = 5;
inline constexpr uint64_t metrics = 6;
}  // namespace seed_tag

}  // namespace sbg
