#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "vdd/core/tensor.hpp"

namespace vdd {

// All randomness in the project flows through named streams derived from the
// run seed, so independently consumed purposes (shuffling, reparameterization
// noise, exemplar re-draws, dropout, ...) never perturb each other and any
// epoch's streams can be reconstructed exactly from (seed, purpose, epoch).
enum class Stream : uint64_t {
  kInit = 1,
  kGlyph = 2,
  kStyle = 3,
  kPool = 4,
  kShuffle = 5,
  kReparam = 6,
  kFakeDomain = 7,
  kExemplar = 8,
  kDropout = 9,
  kEval = 10,
  kTest = 99,
};

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256++; state seeded through splitmix64 per Blackman & Vigna.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  static Rng derive(uint64_t seed, Stream purpose, uint64_t a = 0, uint64_t b = 0) {
    uint64_t sm = seed;
    uint64_t h = splitmix64(sm);
    sm = h ^ (static_cast<uint64_t>(purpose) * 0x9e3779b97f4a7c15ull);
    h = splitmix64(sm);
    sm = h ^ (a * 0xd1342543de82ef95ull) ^ (b * 0xaf251af3b0f025b5ull);
    return Rng(splitmix64(sm));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Debiased via rejection.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Box-Muller without the cached spare, for a stateless draw sequence.
  double normal() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, T scale = T(1)) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal()) * scale;
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, T lo, T hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace vdd
