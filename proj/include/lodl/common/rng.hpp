#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace lodl {

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator so it plugs into
/// the <random> distributions; small state makes per-sample streams cheap.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Mixes a seed with stream coordinates into an independent stream seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = seed ^ 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) {
    SplitMix64 mix(h ^ (p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    h = mix();
  }
  return h;
}

}  // namespace lodl
