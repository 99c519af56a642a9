// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based deterministic RNG. Every draw is a pure function of
// (seed, counter): the 64-bit splitmix64 finalizer applied to
// seed + (counter + 1) * 0x9E3779B97F4A7C15. Identical (seed, counter)
// therefore reproduces identical sequences across runs -- the state is
// two integers and can be checkpointed verbatim.

#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace dmlf {

class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }
  void set_state(uint64_t seed, uint64_t counter) {
    seed_ = seed;
    counter_ = counter;
  }

  // Independent stream derived from a base seed and a stream id.
  static Rng derive(uint64_t seed, uint64_t stream_id) {
    return Rng(mix(seed ^ mix(stream_id + 0x517CC1B727220A95ULL)), 0);
  }

  uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform in [0, 1), 24 bits of mantissa so the division is exact.
  float uniform() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller on two uniform draws.
  float normal() {
    float u1 = (static_cast<float>(next_u64() >> 40) + 1.0f) * (1.0f / 16777216.0f);
    float u2 = uniform();
    return std::sqrt(-2.0f * std::log(u1)) *
           std::cos(6.28318530717958647692f * u2);
  }

  // Unbiased-enough integer in [0, n) via the fixed-point multiply trick.
  int uniform_int(int n) {
    uint64_t x = next_u64() >> 32;
    return static_cast<int>((x * static_cast<uint64_t>(n)) >> 32);
  }

  bool bernoulli(float p) { return uniform() < p; }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(p[i], p[j]);
    }
    return p;
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace dmlf
