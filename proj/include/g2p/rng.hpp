#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace g2p {

// Deterministic, platform-independent RNG. std::mt19937 plus the standard
// distributions would be reproducible only per libstdc++ version, so the
// generator and the distributions are implemented here and pinned.
//
// Substreams: every consumer (shuffling, dropout, position sampling, ...)
// derives its own Rng from (seed, stream ids...) so draw order in one
// consumer can never perturb another.

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  Rng() : Rng(0) {}

  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Derive an independent substream from a seed and a list of stream ids.
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> ids) {
    uint64_t sm = seed;
    uint64_t h = splitmix64(sm);
    for (uint64_t id : ids) {
      sm ^= id + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h = splitmix64(sm);
    }
    return Rng(h);
  }

  // xoshiro256++
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

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n > 0. Rejection-free modulo of a 64-bit
  // draw; bias is < 2^-53 for the n used here (vocab/corpus sizes).
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (deterministic, no cached spare).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // keep log() argument away from zero
    u1 = u1 + 0x1.0p-54;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // In-place Fisher-Yates shuffle.
  template <class V>
  void shuffle(V& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

// Stream ids used across the library (kept in one place so substreams can
// never collide by accident).
namespace stream {
constexpr uint64_t kInit = 1;     // model parameter init
constexpr uint64_t kShuffle = 2;  // epoch shuffling
constexpr uint64_t kDropout = 3;  // dropout masks
constexpr uint64_t kSample = 4;   // two-pass position sampling
constexpr uint64_t kCorpus = 5;   // corpus generation
}  // namespace stream

}  // namespace g2p
