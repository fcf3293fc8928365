#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rfnet/common.hpp"

namespace rfnet {

// Deterministic counter-based generator (splitmix64 finalizer over an
// incrementing counter). The full stream state is (seed, counter), which makes
// it trivial to serialize into checkpoints and resume bit-exactly: the n-th
// draw after restore equals the n-th draw of an uninterrupted run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1): 53 random mantissa bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  // Uniform integer in [0, n). Multiply-shift range reduction.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ValueError("Rng::uniform_int: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) {
    if (p < 0.0 || p > 1.0) throw ValueError("Rng::bernoulli: p outside [0,1]");
    return uniform01() < p;
  }

  // Standard normal via Box-Muller. Consumes exactly two draws per call and
  // keeps no cached second value, so the (seed, counter) pair stays the whole
  // state.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Sample an index from an (already normalized) probability vector by walking
  // the cumulative sum. Falls back to the last index if rounding leaves the
  // draw above the accumulated mass.
  std::size_t categorical(const std::vector<double>& probs) {
    if (probs.empty()) throw ValueError("Rng::categorical: empty distribution");
    double u = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace rfnet
