#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace nhmpc {

// SplitMix64 step, used for seed mixing and sub-stream derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic random stream with portable output.
///
/// std::mt19937_64 supplies the raw bits; the real-valued draws below avoid
/// the std::*_distribution adapters, whose output is implementation-defined.
/// Identical seeds therefore produce bitwise-identical draw sequences on any
/// conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n) by rejection; n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  /// Fisher-Yates shuffle. std::shuffle leaves the permutation order
  /// unspecified, so it is rolled out by hand here.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

  /// Independent sub-stream k derived from this stream's seed.
  Rng spawn(std::uint64_t k) const {
    std::uint64_t s = seed_ + 0x42cbdf3bbd2f2ecdULL * (k + 1);
    return Rng(splitmix64(s));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace nhmpc
