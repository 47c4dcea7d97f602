#pragma once

#include <string>
#include <vector>

#include "timely/ops.hpp"
#include "timely/rng.hpp"

namespace timely {

struct NamedParam {
  std::string name;
  Var var;
};

// Non-trainable state that must survive a checkpoint (e.g. batch-norm running statistics).
struct NamedBuffer {
  std::string name;
  NdArray* array;
};

using ParamList = std::vector<NamedParam>;
using BufferList = std::vector<NamedBuffer>;

std::size_t count_parameters(const ParamList& params);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
NdArray init_uniform(Rng& rng, const Shape& shape, std::size_t fan_in);

struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [out], undefined when the layer has no bias

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);

  Var operator()(const Var& x) const;
  // Row-vector application without recording a graph.
  std::vector<double> apply(std::span<const double> x) const;
  void collect(ParamList& out, const std::string& prefix) const;
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
};

struct LayerNorm {
  Var gamma;
  Var beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim, double eps = 1e-5);

  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta, eps); }
  std::vector<double> apply(std::span<const double> x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct BatchNorm {
  Var gamma;
  Var beta;
  BatchNormState state;
  NdArray has_stats_flag{Shape{1}};

  BatchNorm() = default;
  explicit BatchNorm(std::size_t dim, double momentum = 0.1, double eps = 1e-5);

  Var operator()(const Var& x, bool training, const std::vector<double>& row_mask = {});
  // Eval-mode application to one row.
  std::vector<double> apply(std::span<const double> x) const;
  void collect(ParamList& out, const std::string& prefix) const;
  void collect_buffers(BufferList& out, const std::string& prefix);
  // Re-reads has_stats after buffers were loaded.
  void sync_from_buffers() { state.has_stats = has_stats_flag[0] != 0.0; }
};

double swish_scalar(double x);

}  // namespace timely
