#pragma once

#include <cmath>
#include <cstdint>

namespace kinetrace {

// 64-bit finalizer (splitmix64): bijective, avalanching.
inline uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

// Counter-based generator. A stream is keyed by (seed, stream, substream);
// draws are a pure function of (key, draw index), so results do not depend
// on how work is partitioned across threads. Particle simulations rekey the
// substream at every event, giving each event an independent draw sequence.
class CounterRng {
 public:
  CounterRng() : key_(0), ctr_(0) {}
  CounterRng(uint64_t seed, uint64_t stream = 0, uint64_t substream = 0)
      : ctr_(0) {
    uint64_t a = mix64(seed + 0x9e3779b97f4a7c15ULL);
    uint64_t b = mix64(a ^ (stream + 0xd1b54a32d192ed03ULL));
    key_ = mix64(b ^ (substream + 0x8cb92ba72f3d8dd7ULL));
  }

  void rekey_substream(uint64_t seed, uint64_t stream, uint64_t substream) {
    *this = CounterRng(seed, stream, substream);
  }

  uint64_t next_u64() {
    ctr_ += 0x9e3779b97f4a7c15ULL;
    return mix64(key_ + ctr_);
  }

  // Uniform on [0,1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * next_double(); }

  // Box-Muller; fixed draw count of two per pair.
  void normal_pair(double& g1, double& g2) {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    g1 = r * std::cos(6.283185307179586477 * u2);
    g2 = r * std::sin(6.283185307179586477 * u2);
  }

 private:
  uint64_t key_;
  uint64_t ctr_;
};

}  // namespace kinetrace
