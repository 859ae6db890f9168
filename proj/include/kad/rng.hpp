#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace kad {

// Deterministic, platform-independent RNG. <random> distributions are
// implementation-defined, so every draw here is spelled out explicitly.
// State round-trips through checkpoints as 16-bit words (exact in f32).

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stable sub-seed for a named component, so e.g. student init draws the
// same values whether or not an adapter was built before it.
inline uint64_t derive_seed(uint64_t seed, std::string_view component) {
  uint64_t h = seed ^ 0xcbf29ce484222325ULL;
  for (char c : component) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  uint64_t s = h;
  return splitmix64(s);
}

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 24 bits of mantissa, exact in float.
  float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0. Modulo bias is irrelevant at our n.
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // 4 x u64 state as 16 x u16 words, each exactly representable in f32.
  std::array<uint16_t, 16> save_state() const {
    std::array<uint16_t, 16> out{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        out[i * 4 + j] = static_cast<uint16_t>(s_[i] >> (16 * j));
    return out;
  }

  void load_state(const std::array<uint16_t, 16>& words) {
    for (int i = 0; i < 4; ++i) {
      uint64_t w = 0;
      for (int j = 0; j < 4; ++j)
        w |= static_cast<uint64_t>(words[i * 4 + j]) << (16 * j);
      s_[i] = w;
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

}  // namespace kad
