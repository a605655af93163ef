#pragma once

// Deterministic randomness. SplitMix64 is the single generator used everywhere
// (init, data synthesis, shuffles); it is seedable, splittable by XOR-ing in a
// stream tag, and produces identical sequences on every platform.

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

namespace bunet {

// 64-bit FNV-1a; used to derive per-name substreams (e.g. one init stream per
// parameter) so that adding or removing one consumer never shifts the draws
// seen by any other.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : x_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (x_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits (exact double).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Standard normal via Box-Muller (one draw per call; the pair's second half
  // is discarded to keep the stream position independent of call parity).
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::uint64_t x_;
};

// Substream seed for a named consumer of a global seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view name) {
  return seed ^ fnv1a64(name);
}

}  // namespace bunet
