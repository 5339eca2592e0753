// SPDX-License-Identifier: Apache-2.0
#include "mmate/numerics/random.hpp"

#include <cmath>
#include <numbers>

namespace mmate::num {
namespace {

// splitmix64 finalizer; decorrelates nearby (seed, stream) pairs.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) { return Rng(mix(mix(seed) ^ mix(stream + 1))); }

// Distributions are written out rather than taken from <random> so that
// sequences do not depend on the standard library implementation.
double Rng::uniform(double lo, double hi) {
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(engine_() % span);
}

Array randn(const Shape& shape, Rng& rng, double stddev) {
  Array a(shape);
  for (auto& v : a.values()) v = rng.normal(0.0, stddev);
  return a;
}

Array rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  Array a(shape);
  for (auto& v : a.values()) v = rng.uniform(lo, hi);
  return a;
}

}  // namespace mmate::num
