#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace consist {

// Counter-based deterministic RNG. Each draw hashes (seed, counter), so the
// stream depends only on the seed and the call sequence, never on global
// state. Normal variates come from Box-Muller on the hashed uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  std::uint64_t next_u64() {
    std::uint64_t x = seed_ + 0x9e3779b97f4a7c15ULL * (++counter_);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }

  // Uniform in (0, 1].
  double uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double std) {
    if (std < 0.0) throw std::invalid_argument("Rng::normal: negative std");
    return mean + std * normal();
  }

  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Independent substream; forks with distinct tags never collide with the
  // parent stream or each other.
  Rng fork(std::uint64_t tag) const {
    std::uint64_t x = seed_ ^ (0x2545f4914f6cdd1dULL * (tag + 1));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return Rng(x);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace consist
