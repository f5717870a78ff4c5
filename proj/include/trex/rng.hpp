#pragma once

// Deterministic random number generation.
//
// The standard <random> distributions are implementation-defined, which breaks
// the byte-identical reproducibility this project promises across toolchains.
// This header provides a fixed engine (xoshiro256**) and explicit mappings for
// the few distributions the simulator needs.  Independent sub-streams are
// derived by hashing a label into the parent seed, so per-trial and per-purpose
// streams never share state and parallel execution matches serial execution.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace trex {

namespace detail {

// splitmix64: seeds the main engine and hashes stream labels.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be > 0.  Uses rejection to stay unbiased.
  std::uint64_t uniform_u64(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller.  No cached spare: one draw consumes two
  // uniforms, so the stream position is a pure function of the call count.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent stream.  Label and a salt counter are folded into
  // the parent's seed material without consuming parent state.
  Rng derive(std::string_view label) const {
    std::uint64_t h = 0x2545f4914f6cdd1dull;
    for (const unsigned char c : label) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    std::uint64_t mix = state_[0] ^ detail::rotl(state_[2], 13) ^ h;
    return Rng(detail::splitmix64(mix));
  }

  Rng derive(std::string_view label, std::uint64_t index) const {
    std::uint64_t h = index * 0x9e3779b97f4a7c15ull + 0x51afd7ed558ccd25ull;
    std::uint64_t mix = state_[1] ^ detail::rotl(state_[3], 29) ^ h;
    Rng child = derive(label);
    std::uint64_t sm = child.state_[0] ^ detail::splitmix64(mix);
    return Rng(sm);
  }

 private:
  std::uint64_t state_[4] = {};
};

}  // namespace trex
