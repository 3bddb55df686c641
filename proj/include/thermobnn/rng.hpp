// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, index), so results do not depend on thread count or on the
// order in which samples are visited.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>

namespace thermobnn {

std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
/// Uniform in [0, 1) with 53 random bits.
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);
double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Folds several identifiers (epoch, sample index, ...) into one stream id.
std::uint64_t derive_stream(std::initializer_list<std::uint64_t> parts);

/// Sequential view over one counter stream.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return counter_hash(seed_, stream_, counter_++); }
  double uniform() { return counter_uniform(seed_, stream_, counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return counter_normal(seed_, stream_, counter_++); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return n == 0 ? 0 : static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace thermobnn
