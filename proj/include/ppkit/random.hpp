#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace ppkit {

inline constexpr double kPi = 3.14159265358979323846;

// SplitMix64 mixer; spreads user seeds and derives substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Seeded generator with hand-rolled samplers. mt19937_64 output is pinned by
// the standard and the samplers below consume a fixed number of draws per
// variate, so a given seed produces the same stream on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  // Independent substream i; stable under reordering of substream use.
  Rng substream(std::uint64_t i) const {
    return Rng(splitmix64(seed_ ^ splitmix64(0x5EEDB00Bull + i)));
  }

  std::uint64_t u64() { return engine_(); }

  // Uniform on [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0,1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((u64() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller; exactly two u64 draws per variate, no cached spare.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Poisson count via Knuth's product method, chunked so exp(-mean) never
  // underflows. Exact for any mean by superposition.
  long poisson(double mean) {
    if (!(mean >= 0.0) || !std::isfinite(mean))
      throw std::invalid_argument("poisson: mean must be finite and >= 0");
    long total = 0;
    while (mean > 40.0) {
      total += poisson_small(40.0);
      mean -= 40.0;
    }
    return total + poisson_small(mean);
  }

 private:
  long poisson_small(double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    long k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform_pos();
    } while (p > limit);
    return k - 1;
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ppkit
