// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "mmate/numerics/array.hpp"

namespace mmate::num {

/// Seeded generator. Streams are derived, never shared, so every consumer of
/// randomness is reproducible from (seed, stream id).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent generator for a named sub-stream.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Array randn(const Shape& shape, Rng& rng, double stddev = 1.0);
Array rand_uniform(const Shape& shape, Rng& rng, double lo, double hi);

}  // namespace mmate::num
