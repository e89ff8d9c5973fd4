#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace tcaq {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256** with splitmix64 seeding. All randomness in the project goes
// through this class so results do not depend on libstdc++ distribution
// internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed, 0); }
  Rng(uint64_t seed, uint64_t stream) { reseed(seed, stream); }

  void reseed(uint64_t seed, uint64_t stream) {
    uint64_t s = seed ^ (0xda3e39cb94b95bdbULL * (stream + 1));
    for (auto& w : state_) w = splitmix64(s);
    has_spare_ = false;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  // standard normal via Box-Muller with a cached spare
  float normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    float u1 = 1.0f - uniform();  // (0, 1]
    float u2 = uniform();
    float r = std::sqrt(-2.0f * std::log(u1));
    float a = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void fill_normal(std::vector<float>& v) {
    for (auto& x : v) x = normal();
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4];
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace tcaq
