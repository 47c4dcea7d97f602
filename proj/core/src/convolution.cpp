#include "timely/convolution.hpp"

#include <cmath>

#include "timely/errors.hpp"

namespace timely {

std::size_t conv_output_length(std::size_t length, std::size_t kernel, const Conv1dSpec& spec) {
  const std::size_t padded = length + spec.pad_left + spec.pad_right;
  if (spec.stride == 0) throw ConfigError("conv stride must be >= 1");
  if (padded < kernel) throw InputError("sequence of length " + std::to_string(length) + " is shorter than kernel");
  return (padded - kernel) / spec.stride + 1;
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, const Conv1dSpec& spec) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 3) {
    throw DimensionError("conv1d expects x [B x L x C] and weight [C_out x C_in/g x K]; got " + shape_str(xs) +
                         " and " + shape_str(ws));
  }
  const std::size_t batch = xs[0];
  const std::size_t len = xs[1];
  const std::size_t cin = xs[2];
  const std::size_t cout = ws[0];
  const std::size_t kernel = ws[2];
  const std::size_t groups = spec.groups;
  if (groups == 0 || cin % groups != 0 || cout % groups != 0 || ws[1] != cin / groups) {
    throw DimensionError("conv1d channel/group mismatch: x " + shape_str(xs) + ", weight " + shape_str(ws) +
                         ", groups " + std::to_string(groups));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) throw DimensionError("conv1d bias must be [C_out]");
  const std::size_t lout = conv_output_length(len, kernel, spec);
  const std::size_t cin_g = cin / groups;
  const std::size_t cout_g = cout / groups;

  NdArray out(Shape{batch, lout, cout});
  const double* xv = x.value().raw();
  const double* wv = weight.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < lout; ++t) {
      double* orow = out.raw() + (b * lout + t) * cout;
      for (std::size_t co = 0; co < cout; ++co) {
        const std::size_t g = co / cout_g;
        double acc = bias.defined() ? bias.value()[co] : 0.0;
        for (std::size_t j = 0; j < kernel; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * spec.stride + j) -
                                     static_cast<std::ptrdiff_t>(spec.pad_left);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const double* xrow = xv + (b * len + static_cast<std::size_t>(src)) * cin + g * cin_g;
          const double* wrow = wv + co * cin_g * kernel;
          for (std::size_t ci = 0; ci < cin_g; ++ci) acc += wrow[ci * kernel + j] * xrow[ci];
        }
        orow[co] = acc;
      }
    }
  }
  std::vector<Var> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op(std::move(out), parents,
                 [x, weight, bias, spec, batch, len, cin, cout, kernel, lout, cin_g, cout_g](const NdArray& g) {
                   NdArray gx(x.shape());
                   NdArray gw(weight.shape());
                   NdArray gb(Shape{cout});
                   const double* xv = x.value().raw();
                   const double* wv = weight.value().raw();
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t t = 0; t < lout; ++t) {
                       const double* grow = g.raw() + (b * lout + t) * cout;
                       for (std::size_t co = 0; co < cout; ++co) {
                         const double go = grow[co];
                         gb[co] += go;
                         if (go == 0.0) continue;
                         const std::size_t grp = co / cout_g;
                         for (std::size_t j = 0; j < kernel; ++j) {
                           const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * spec.stride + j) -
                                                      static_cast<std::ptrdiff_t>(spec.pad_left);
                           if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                           const std::size_t base = (b * len + static_cast<std::size_t>(src)) * cin + grp * cin_g;
                           for (std::size_t ci = 0; ci < cin_g; ++ci) {
                             gw[(co * cin_g + ci) * kernel + j] += go * xv[base + ci];
                             gx[base + ci] += go * wv[(co * cin_g + ci) * kernel + j];
                           }
                         }
                       }
                     }
                   }
                   accumulate_grad(x, gx);
                   accumulate_grad(weight, gw);
                   if (bias.defined()) accumulate_grad(bias, gb);
                 });
}

namespace {

constexpr Conv1dSpec kSubsampleSpec{2, 1, 1, 1};

}  // namespace

ConvSubsampler::ConvSubsampler(std::size_t channels, Rng& rng) : channels_(channels) {
  const std::size_t fan_in = channels * 3;
  w1 = Var::parameter(init_uniform(rng, {channels, channels, 3}, fan_in), "w1");
  b1 = Var::parameter(NdArray(Shape{channels}), "b1");
  w2 = Var::parameter(init_uniform(rng, {channels, channels, 3}, fan_in), "w2");
  b2 = Var::parameter(NdArray(Shape{channels}), "b2");
}

Var ConvSubsampler::operator()(const Var& x) const {
  if (x.shape().size() != 3) throw DimensionError("subsampler expects [B x L x V], got " + shape_str(x.shape()));
  if (x.shape()[1] < 4) {
    throw InputError("subsampler needs at least 4 timesteps, got " + std::to_string(x.shape()[1]));
  }
  if (x.shape()[2] != channels_) {
    throw DimensionError("subsampler built for " + std::to_string(channels_) + " variates, got " +
                         shape_str(x.shape()));
  }
  Var h = swish(conv1d(x, w1, b1, kSubsampleSpec));
  return conv1d(h, w2, b2, kSubsampleSpec);
}

std::vector<double> ConvSubsampler::token_at(std::span<const double> raw, std::size_t steps, std::size_t j) const {
  const std::size_t c = channels_;
  if (raw.size() != steps * c) throw DimensionError("raw history size does not match steps x channels");
  const std::size_t l1 = subsample_stage_length(steps);
  const double* w1v = w1.value().raw();
  const double* w2v = w2.value().raw();
  auto first_stage = [&](std::ptrdiff_t i) {
    std::vector<double> h(c, 0.0);
    if (i < 0 || i >= static_cast<std::ptrdiff_t>(l1)) return h;
    for (std::size_t co = 0; co < c; ++co) {
      double acc = b1.value()[co];
      for (std::size_t jj = 0; jj < 3; ++jj) {
        const std::ptrdiff_t src = 2 * i - 1 + static_cast<std::ptrdiff_t>(jj);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        for (std::size_t ci = 0; ci < c; ++ci) acc += w1v[(co * c + ci) * 3 + jj] * raw[static_cast<std::size_t>(src) * c + ci];
      }
      h[co] = swish_scalar(acc);
    }
    return h;
  };
  std::vector<double> out(c);
  std::vector<std::vector<double>> hs;
  for (std::size_t jj = 0; jj < 3; ++jj) hs.push_back(first_stage(2 * static_cast<std::ptrdiff_t>(j) - 1 + static_cast<std::ptrdiff_t>(jj)));
  for (std::size_t co = 0; co < c; ++co) {
    double acc = b2.value()[co];
    for (std::size_t jj = 0; jj < 3; ++jj)
      for (std::size_t ci = 0; ci < c; ++ci) acc += w2v[(co * c + ci) * 3 + jj] * hs[jj][ci];
    out[co] = acc;
  }
  return out;
}

void ConvSubsampler::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".conv1.weight", w1});
  out.push_back({prefix + ".conv1.bias", b1});
  out.push_back({prefix + ".conv2.weight", w2});
  out.push_back({prefix + ".conv2.bias", b2});
}

ConvVariant parse_conv_variant(std::string_view name) {
  if (name == "depthwise+pointwise") return ConvVariant::kDepthwisePointwise;
  if (name == "pointwise+depthwise+pointwise") return ConvVariant::kPointwiseDepthwisePointwise;
  if (name == "depthwise-only") return ConvVariant::kDepthwiseOnly;
  if (name == "pointwise-only") return ConvVariant::kPointwiseOnly;
  if (name == "none") return ConvVariant::kNone;
  throw ConfigError("unknown conv variant '" + std::string(name) + "'");
}

std::string_view to_string(ConvVariant v) {
  switch (v) {
    case ConvVariant::kDepthwisePointwise: return "depthwise+pointwise";
    case ConvVariant::kPointwiseDepthwisePointwise: return "pointwise+depthwise+pointwise";
    case ConvVariant::kDepthwiseOnly: return "depthwise-only";
    case ConvVariant::kPointwiseOnly: return "pointwise-only";
    case ConvVariant::kNone: return "none";
  }
  return "none";
}

TemporalConvModule::TemporalConvModule(std::size_t channels, std::size_t kernel, ConvVariant variant, Rng& rng,
                                       double bn_momentum, double norm_eps)
    : channels_(channels), kernel_(kernel), variant_(variant) {
  if (kernel == 0) throw ConfigError("temporal conv kernel must be >= 1");
  switch (variant) {
    case ConvVariant::kDepthwisePointwise: stages_ = {Stage::kDepthwise, Stage::kPointwise}; break;
    case ConvVariant::kPointwiseDepthwisePointwise:
      stages_ = {Stage::kPointwise, Stage::kDepthwise, Stage::kPointwise};
      break;
    case ConvVariant::kDepthwiseOnly: stages_ = {Stage::kDepthwise}; break;
    case ConvVariant::kPointwiseOnly: stages_ = {Stage::kPointwise}; break;
    case ConvVariant::kNone: return;
  }
  ln_ = LayerNorm(channels, norm_eps);
  bn_ = BatchNorm(channels, bn_momentum);
  for (Stage s : stages_) {
    if (s == Stage::kDepthwise) {
      weights.push_back(Var::parameter(init_uniform(rng, {channels, 1, kernel}, kernel), "dw.weight"));
    } else {
      weights.push_back(Var::parameter(init_uniform(rng, {channels, channels, 1}, channels), "pw.weight"));
    }
    biases.push_back(Var::parameter(NdArray(Shape{channels}), "bias"));
  }
}

Var TemporalConvModule::operator()(const Var& x, bool training, const std::vector<double>& row_mask) {
  if (variant_ == ConvVariant::kNone) return x;
  if (x.shape().size() != 3 || x.shape()[2] != channels_) {
    throw DimensionError("temporal conv expects [B x L x " + std::to_string(channels_) + "], got " +
                         shape_str(x.shape()));
  }
  Var y = ln_(x);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (stages_[i] == Stage::kDepthwise) {
      y = conv1d(y, weights[i], biases[i], Conv1dSpec{1, kernel_ - 1, 0, channels_});
    } else {
      y = conv1d(y, weights[i], biases[i], Conv1dSpec{1, 0, 0, 1});
    }
  }
  y = swish(bn_(y, training, row_mask));
  return add(x, y);
}

TemporalConvModule::StepCache TemporalConvModule::make_cache() const {
  StepCache c;
  c.history.resize(stages_.size());
  return c;
}

std::vector<double> TemporalConvModule::step(std::span<const double> x, StepCache& cache) const {
  if (variant_ == ConvVariant::kNone) return {x.begin(), x.end()};
  if (cache.history.size() != stages_.size()) cache = make_cache();
  const std::size_t c = channels_;
  std::vector<double> y = ln_.apply(x);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const double* w = weights[i].value().raw();
    const double* b = biases[i].value().raw();
    std::vector<double> next(c);
    if (stages_[i] == Stage::kDepthwise) {
      auto& hist = cache.history[i];
      hist.push_back(y);
      if (hist.size() > kernel_) hist.pop_front();
      // hist.back() aligns with tap K-1; older rows with smaller taps.
      const std::size_t offset = kernel_ - hist.size();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = b[ch];
        for (std::size_t r = 0; r < hist.size(); ++r) acc += w[ch * kernel_ + offset + r] * hist[r][ch];
        next[ch] = acc;
      }
    } else {
      for (std::size_t co = 0; co < c; ++co) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < c; ++ci) acc += w[co * c + ci] * y[ci];
        next[co] = acc;
      }
    }
    y = std::move(next);
  }
  y = bn_.apply(y);
  std::vector<double> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] = x[ch] + swish_scalar(y[ch]);
  return out;
}

void TemporalConvModule::zero_block() {
  for (Var& w : weights) w.mutable_value().fill(0.0);
  for (Var& b : biases) b.mutable_value().fill(0.0);
}

void TemporalConvModule::collect(ParamList& out, const std::string& prefix) const {
  if (variant_ == ConvVariant::kNone) return;
  ln_.collect(out, prefix + ".norm");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string kind = stages_[i] == Stage::kDepthwise ? ".depthwise" : ".pointwise";
    out.push_back({prefix + ".stage" + std::to_string(i) + kind + ".weight", weights[i]});
    out.push_back({prefix + ".stage" + std::to_string(i) + kind + ".bias", biases[i]});
  }
  bn_.collect(out, prefix + ".batch_norm");
}

void TemporalConvModule::collect_buffers(BufferList& out, const std::string& prefix) {
  if (variant_ == ConvVariant::kNone) return;
  bn_.collect_buffers(out, prefix + ".batch_norm");
}

}  // namespace timely
