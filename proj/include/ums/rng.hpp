#pragma once

// Deterministic, platform-portable random streams. std::<distribution> output
// is implementation-defined, so draws are derived from the raw mt19937_64
// stream directly; scene serialization stays byte-identical across stdlibs.

#include <cmath>
#include <cstdint>
#include <random>

namespace ums {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(splitmix64(seed)) {}

  /// Derive an independent stream, e.g. per (seed, frame) pair.
  static Rng derive(uint64_t seed, uint64_t stream) {
    return Rng(splitmix64(seed) ^ splitmix64(stream * 0x9E3779B97F4A7C15ull + 1));
  }

  uint64_t bits() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  /// Standard normal via Box-Muller (no cached spare; two draws per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Knuth Poisson sampler; fine for the small rates used in scene sampling.
  int poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda > 2000.0) lambda = 2000.0;
    const double limit = std::exp(-lambda);
    double prod = 1.0;
    int k = 0;
    do {
      ++k;
      prod *= uniform();
    } while (prod > limit);
    return k - 1;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ums
