#pragma once

#include <cstdint>
#include <limits>

namespace qdup {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix_key(std::uint64_t seed, std::uint64_t key) {
  return splitmix64(seed ^ splitmix64(key + 0x632be59bd9b4e019ULL));
}

// Counter-based stream keyed by (seed, key): the i-th draw depends only on
// the key and i, so independent streams can be consumed in any order or in
// parallel without changing results.
class KeyedRng {
 public:
  using result_type = std::uint64_t;

  KeyedRng(std::uint64_t seed, std::uint64_t key) : base_(mix_key(seed, key)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(base_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = max() - max() % n;
    for (;;) {
      const std::uint64_t r = (*this)();
      if (r < limit) return r % n;
    }
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

}  // namespace qdup
