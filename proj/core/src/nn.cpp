#include "timely/nn.hpp"

#include <cmath>

#include "timely/errors.hpp"

namespace timely {

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

NdArray init_uniform(Rng& rng, const Shape& shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_array(shape, -bound, bound);
}

Linear::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  weight = Var::parameter(init_uniform(rng, {in, out}, in), "weight");
  if (with_bias) bias = Var::parameter(NdArray(Shape{out}), "bias");
}

Var Linear::operator()(const Var& x) const {
  Var y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

std::vector<double> Linear::apply(std::span<const double> x) const {
  const std::size_t in = in_features();
  const std::size_t out = out_features();
  if (x.size() != in) throw DimensionError("linear input width " + std::to_string(x.size()) + " != " + std::to_string(in));
  std::vector<double> y(out, 0.0);
  const double* w = weight.value().raw();
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * w[i * out + j];
  }
  if (bias.defined())
    for (std::size_t j = 0; j < out; ++j) y[j] += bias.value()[j];
  return y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim, double eps_) : eps(eps_) {
  gamma = Var::parameter(NdArray(Shape{dim}, 1.0), "gamma");
  beta = Var::parameter(NdArray(Shape{dim}), "beta");
}

std::vector<double> LayerNorm::apply(std::span<const double> x) const {
  const std::size_t c = x.size();
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(c);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(c);
  const double is = 1.0 / std::sqrt(var + eps);
  std::vector<double> y(c);
  for (std::size_t j = 0; j < c; ++j) y[j] = gamma.value()[j] * ((x[j] - mu) * is) + beta.value()[j];
  return y;
}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

BatchNorm::BatchNorm(std::size_t dim, double momentum, double eps) : state(dim) {
  gamma = Var::parameter(NdArray(Shape{dim}, 1.0), "gamma");
  beta = Var::parameter(NdArray(Shape{dim}), "beta");
  state.momentum = momentum;
  state.eps = eps;
}

Var BatchNorm::operator()(const Var& x, bool training, const std::vector<double>& row_mask) {
  Var y = batch_norm(x, gamma, beta, state, training, row_mask);
  has_stats_flag[0] = state.has_stats ? 1.0 : 0.0;
  return y;
}

std::vector<double> BatchNorm::apply(std::span<const double> x) const {
  if (!state.has_stats) throw StateError("batch_norm evaluated before any training statistics were recorded");
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double is = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    y[j] = gamma.value()[j] * ((x[j] - state.running_mean[j]) * is) + beta.value()[j];
  }
  return y;
}

void BatchNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm::collect_buffers(BufferList& out, const std::string& prefix) {
  out.push_back({prefix + ".running_mean", &state.running_mean});
  out.push_back({prefix + ".running_var", &state.running_var});
  out.push_back({prefix + ".has_stats", &has_stats_flag});
}

double swish_scalar(double x) {
  const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return x * s;
}

}  // namespace timely
