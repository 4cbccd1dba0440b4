#pragma once

// Counter-based noise. Every Gaussian draw is a pure function of
// (seed, stream, chain, step, coordinate), so chains can run in any order or
// on any number of threads and still produce bit-identical trajectories.

#include <cmath>
#include <cstdint>

#include "ssl/core.hpp"

namespace ssl {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (splitmix64(b) + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

/// Purpose tags keep independent uses of one seed from sharing noise.
enum class Stream : std::uint64_t {
  kInit = 1,
  kStep = 2,
  kLevel = 3,
  kCorrector = 4,
  kExact = 5,
  kOracle = 6,
  kCalibration = 7,
};

/// One (chain, step) worth of draws. Satisfies UniformRandomBitGenerator so it
/// can also feed <random> distributions.
class NoiseStream {
 public:
  using result_type = std::uint64_t;

  NoiseStream(std::uint64_t seed, Stream stream, std::uint64_t chain, std::uint64_t step)
      : key_(hash_combine(hash_combine(hash_combine(seed, static_cast<std::uint64_t>(stream)), chain),
                          step)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() { return splitmix64(key_ ^ (0xd1b54a32d192ed03ULL * ++counter_)); }

  /// Uniform on (0, 1).
  double uniform() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Box-Muller; the second value of each pair is kept for the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void fill_normal(double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = normal();
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ssl
