#ifndef ADFSDCA_RNG_HPP
#define ADFSDCA_RNG_HPP

#include <cstdint>
#include <limits>

namespace adfsdca {

/// Counter-based 64-bit generator: the n-th output is a pure function of
/// (seed, n), so a stream can be replayed or forked by position.
/// Satisfies UniformRandomBitGenerator.
class counter_rng {
 public:
  using result_type = std::uint64_t;

  explicit counter_rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)), counter_(counter) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    return mix(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), bound > 0 (Lemire's nearly-divisionless).
  std::uint64_t below(std::uint64_t bound) {
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  std::uint64_t position() const { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace adfsdca

#endif
