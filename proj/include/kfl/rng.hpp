#pragma once

#include <cmath>
#include <cstdint>

namespace kfl {

/// Stream identifiers; every randomized subsystem owns a tag so draws in one
/// place can never perturb draws in another.
enum class RngTag : uint64_t {
  kChannel = 1,
  kPartition = 2,
  kWeights = 3,
  kSyntheticMeans = 4,
  kSyntheticData = 5,
  kPattern = 6,
  kDistance = 7,
  kCpuFreq = 8,
  kArch = 9,
  kTestSplit = 10,
};

/// Counter-based splittable generator. The state is a hash of
/// (seed, tag, a, b), so streams keyed by e.g. (device, round) are mutually
/// independent and insensitive to the order in which they are consumed.
/// splitmix64 core: 64-bit integer arithmetic only.
class RngStream {
 public:
  RngStream(uint64_t seed, RngTag tag, uint64_t a = 0, uint64_t b = 0)
      : state_(mix(mix(mix(mix(seed) ^ static_cast<uint64_t>(tag)) ^ a) ^ b)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  /// Uniform on the open interval (0, 1).
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Exp(1) via inversion.
  double exponential() { return -std::log(uniform01()); }

  /// Standard normal via Box-Muller (one sample per pair of uniforms).
  double gaussian() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
};

}  // namespace kfl
