#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace tabbench {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d49bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_str(const std::string& s) {
  // FNV-1a
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Combines an arbitrary list of tags into one seed. Used to derive
// independent per-trial and per-purpose streams from a single config seed.
inline uint64_t derive_seed(std::initializer_list<uint64_t> tags) {
  uint64_t h = 0x2545f4914f6cdd1dULL;
  for (uint64_t t : tags) h = splitmix64(h ^ t);
  return h;
}

// Deterministic RNG stream. All randomness in the project flows through
// one of these; stream independence comes from derive_seed tags.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

  std::mt19937_64& engine() { return engine_; }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) {
    std::uniform_int_distribution<uint64_t> d(0, n - 1);
    return d(engine_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(engine_);
  }

  // Child stream seeded from this one plus a tag.
  Rng split(uint64_t tag) { return Rng(derive_seed({engine_(), tag})); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tabbench
