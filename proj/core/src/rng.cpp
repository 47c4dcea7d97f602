#include "timely/rng.hpp"

#include <cmath>
#include <numbers>

namespace timely {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t key = mix64(seed_ ^ mix64(stream_ + 0x632be59bd9b4e019ULL));
  return mix64(key + 0x9e3779b97f4a7c15ULL * ++counter_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t id) const { return Rng(seed_, mix64(stream_ * 0x100000001b3ULL + id + 1)); }

NdArray Rng::uniform_array(const Shape& shape, double lo, double hi) {
  NdArray out(shape);
  for (double& v : out.data()) v = uniform(lo, hi);
  return out;
}

NdArray Rng::normal_array(const Shape& shape, double stddev) {
  NdArray out(shape);
  for (double& v : out.data()) v = stddev * normal();
  return out;
}

}  // namespace timely
