#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace dualrr {

// splitmix64 finalizer: full-avalanche mix of one 64-bit word.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Order-sensitive key mix for counter-based draws: every word is avalanched
// into the running hash, so (seed, step, k, t, i) tuples that differ in any
// coordinate land on unrelated outputs.
inline std::uint64_t mix_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x8f1bbcdcbfa53e0bULL;
  for (std::uint64_t w : words) h = mix64(h ^ w);
  return h;
}

// u64 -> (0,1): top 52 bits plus a half-step offset. Both endpoints are
// excluded exactly: the largest value is 1 - 2^-53 (representable) and the
// smallest is 2^-53. Using all 53 bits would round the top value to 1.0.
inline double u64_to_open_unit(std::uint64_t x) {
  return (static_cast<double>(x >> 12) + 0.5) * 0x1.0p-52;
}

// Standard Gumbel(0,1) draw for a counter tuple; pure function of its key.
inline double gumbel_noise(std::uint64_t seed, std::uint64_t step, std::uint64_t k,
                           std::uint64_t t, std::uint64_t i) {
  const double u = u64_to_open_unit(mix_key({seed, step, k, t, i}));
  return -std::log(-std::log(u));
}

// Sequential stream RNG with a single-word serializable state (splitmix64).
// No hidden caches: every draw consumes a fixed number of state steps, so
// saving and restoring `state()` replays the stream exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed) {}

  std::uint64_t next_u64() {
    s_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double uniform() { return u64_to_open_unit(next_u64()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; draws two uniforms per call, no cached spare.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Unbiased via rejection on the top multiple of n.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t lim = ~0ULL - (~0ULL % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

  std::uint64_t state() const { return s_; }
  void set_state(std::uint64_t s) { s_ = s; }

 private:
  std::uint64_t s_;
};

}  // namespace dualrr
