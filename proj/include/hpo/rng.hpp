#pragma once

// Counter-based random numbers (Philox4x32-10) with deterministic stream
// splitting.
//
// A stream is identified by (seed, domain, i, j, k). The 64-bit Philox key is
// a SplitMix64 fold of those five values in that order; the 128-bit counter
// starts at zero and advances by one per block of four 32-bit outputs. Two
// streams with different identifiers never share a key, so rollouts for
// (step, group, response) can be sampled in any order or in parallel and
// still reproduce the same values.

#include <array>
#include <cstdint>

namespace hpo {

enum class RngDomain : std::uint64_t {
  dataset = 1,
  shuffle = 2,
  rollout = 3,
  reward = 4,
  eval = 5,
  monte_carlo = 6,
  bernoulli = 7,
  test = 8,
};

std::uint64_t splitmix64(std::uint64_t x);

class RngStream {
 public:
  RngStream(std::uint64_t seed, RngDomain domain, std::uint64_t i = 0, std::uint64_t j = 0,
            std::uint64_t k = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n) without modulo bias; n > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return (std::uint64_t{key_[1]} << 32) | key_[0]; }

 private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> block_{};
  unsigned used_ = 4;
};

/// Philox4x32 with 10 rounds, exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

}  // namespace hpo
