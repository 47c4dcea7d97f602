#pragma once

#include <cstdint>

#include "timely/ndarray.hpp"

namespace timely {

// Counter-based generator: draw i is a pure function of (seed, stream, i), so
// streams are reproducible across platforms and cheap to fork.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream (e.g. one per subject or per parameter tensor).
  Rng fork(std::uint64_t id) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  NdArray uniform_array(const Shape& shape, double lo, double hi);
  NdArray normal_array(const Shape& shape, double stddev = 1.0);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace timely
