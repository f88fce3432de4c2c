#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace mdg {

/// SplitMix64: output k is mix(seed + k·0x9E3779B97F4A7C15). Counter-based,
/// so every stream is reproducible from (seed, position) on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // 53-bit uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Box–Muller; one draw per call, the pair partner is discarded.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream for a labelled sub-task.
  Rng fork(std::uint64_t salt) {
    Rng child(next_u64() ^ (salt * 0xD1B54A32D192ED03ULL));
    return child;
  }

 private:
  std::uint64_t state_;
};

/// Mixes a seed with a salt into a new seed without consuming a stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  Rng r(seed ^ (salt * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL));
  return r.next_u64();
}

}  // namespace mdg
