#pragma once

#include <cstdint>
#include <vector>

#include "timely/autograd.hpp"

namespace timely {

// Broadcasting arithmetic (trailing-dimension alignment).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return mul_scalar(a, s); }
inline Var operator*(double s, const Var& a) { return mul_scalar(a, s); }

Var matmul(const Var& a, const Var& b);

Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var swish(const Var& a);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(const std::vector<Var>& parts, std::size_t axis);

// Multiplies by a fixed 0/1 (or weighting) mask; no gradient flows to the mask.
Var apply_mask(const Var& a, const NdArray& mask);

// Normalizes over the last dimension, then applies per-feature scale and shift.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormState {
  NdArray running_mean;
  NdArray running_var;
  bool has_stats = false;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}), running_var(Shape{channels}, 1.0) {}
};

// Per-channel normalization over all rows of a [.. x C] input. In training mode,
// batch statistics are taken over rows whose `row_mask` entry is nonzero (all rows
// if the mask is empty) and folded into the running averages.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
               const std::vector<double>& row_mask = {});

// Mean over time of [B x L x C] restricted to [begin[b], end[b]) per batch row -> [B x C].
Var mean_over_time(const Var& x, const std::vector<std::size_t>& begin, const std::vector<std::size_t>& end);

// Mean squared error over elements whose row (all but last dim) has nonzero weight.
Var mse_loss(const Var& pred, const NdArray& target, const std::vector<double>& row_weight = {});

// Mean cross-entropy of logits [N x C] against integer targets; rows with zero weight are ignored.
Var cross_entropy(const Var& logits, const std::vector<std::int64_t>& targets,
                  const std::vector<double>& row_weight = {});

NdArray softmax_rows(const NdArray& logits);

}  // namespace timely
