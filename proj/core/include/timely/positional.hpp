#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "timely/autograd.hpp"

namespace timely {

// Rotation frequencies for one head: theta_i = base^(-2i/d), i = 0..d/2-1.
struct RotaryAngles {
  std::size_t head_dim = 0;
  double base = 10000.0;
  std::vector<double> thetas;

  static RotaryAngles make(std::size_t head_dim, double base = 10000.0);
  // Explicit frequencies, e.g. a single quarter-turn theta for hand-checkable cases.
  static RotaryAngles custom(std::size_t head_dim, std::vector<double> thetas);
};

// One decay rate per head, each in (0, 1]. Zero is accepted as the memoryless limit.
struct DecaySchedule {
  std::vector<double> gammas;

  // gamma_h = 1 - 2^-(5+h), h = 1..heads
  static DecaySchedule default_for(std::size_t heads);
  static DecaySchedule uniform(std::size_t heads, double gamma);
  std::size_t heads() const noexcept { return gammas.size(); }
  void validate() const;
};

// Rotates consecutive feature pairs of every row of x [.. x L x D] by position * theta.
// D may span several heads (D = k * head_dim); each head segment is rotated independently.
NdArray rotate(const NdArray& x, std::span<const std::int64_t> positions, const RotaryAngles& angles);
Var rotate(const Var& x, std::span<const std::int64_t> positions, const RotaryAngles& angles);

struct HeadQK {
  std::vector<NdArray> q;  // per head [L x d_q]
  std::vector<NdArray> k;  // per head [L x d_k]
};

// Rotated queries and keys per head. Queries and keys are both turned by +position,
// so under the real inner product <Q_n, K_m> depends only on n - m. Decay is left to
// the retention mask.
HeadQK xpos_qk(const NdArray& x, const NdArray& w_q, const NdArray& w_k, std::span<const std::int64_t> positions,
               const RotaryAngles& angles, const DecaySchedule& schedule);

}  // namespace timely
