#pragma once

#include <cstdint>

#include "egc/normal.hpp"

namespace egc {

// Deterministic RNG used everywhere seeds appear in the public API.
// Normal draws go through the inverse CDF so that streams are reproducible
// bit-for-bit independent of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed != 0 ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // xorshift* variant; period 2^64 - 1.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform on (0, 1), never exactly 0 or 1.
  double uniform() {
    const double u = (next_u64() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  double normal() { return norm_quantile(uniform()); }

  // Uniform integer in [0, n).
  std::uint64_t integer(std::uint64_t n) { return next_u64() % n; }

  // Derive a decorrelated seed for a substream (per row, per variable, ...).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace egc
