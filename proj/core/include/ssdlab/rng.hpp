// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ssdlab {

/// Deterministic random stream built on std::mt19937_64, whose output sequence
/// is fixed by the C++ standard. Distributions are implemented here rather than
/// with <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller (one draw per call, no cached spare).
  double normal();
  /// Uniform integer in [0, n). Rejection sampling, so unbiased.
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  /// Seed for an independent child stream; consumes one draw.
  std::uint64_t derive_seed(std::uint64_t stream);

  /// Engine state as text (the standard stream representation of mt19937_64).
  std::string serialize() const;
  static Rng deserialize(std::uint64_t seed, const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace ssdlab
