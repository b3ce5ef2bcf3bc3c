#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace facemotion {

// All randomness in the project flows through this generator so that results
// are bit-reproducible for a given seed on any platform. std::mt19937 would do,
// but std::normal_distribution's algorithm is implementation-defined, so both
// the engine and the normal transform are pinned here.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Named streams keep independent uses of the same user seed decorrelated.
enum class RngStream : std::uint64_t {
  init = 1,      // parameter initialization
  noise = 2,     // per-step reparameterization draws
  shuffle = 3,   // per-epoch batch order
  sample = 4,    // per-sample prior draws at generation time
  data = 5,      // synthetic data construction
};

// Counter-based derivation: (seed, stream, index) -> independent seed.
// Checkpoint resume only has to remember integer counters.
inline std::uint64_t derive_seed(std::uint64_t seed, RngStream stream, std::uint64_t index = 0) {
  std::uint64_t s = seed + 0x632be59bd9b4e019ull;
  s = splitmix64(s) ^ (static_cast<std::uint64_t>(stream) * 0xff51afd7ed558ccdull);
  s = splitmix64(s) ^ (index * 0xc4ceb9fe1a85ec53ull);
  return splitmix64(s);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform(); // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Normal truncated to +/- 2 sigma, the usual transformer init.
  double truncated_normal(double stddev) {
    double x = normal();
    while (std::abs(x) > 2.0) x = normal();
    return x * stddev;
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our scales and
  // keeps the draw count per call fixed.
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace facemotion
