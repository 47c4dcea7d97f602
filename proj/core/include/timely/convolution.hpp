#pragma once

#include <deque>
#include <string_view>
#include <vector>

#include "timely/nn.hpp"

namespace timely {

struct Conv1dSpec {
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  std::size_t groups = 1;
};

// Channels-last 1-D convolution.
//   x: [B x L x C_in], weight: [C_out x C_in/groups x K], bias: [C_out] or undefined.
Var conv1d(const Var& x, const Var& weight, const Var& bias, const Conv1dSpec& spec);

std::size_t conv_output_length(std::size_t length, std::size_t kernel, const Conv1dSpec& spec);

// Length after one kernel-3 / stride-2 / padding-1 stage: floor((L - 1) / 2) + 1.
constexpr std::size_t subsample_stage_length(std::size_t length) { return (length - 1) / 2 + 1; }
constexpr std::size_t subsampled_length(std::size_t length) {
  return subsample_stage_length(subsample_stage_length(length));
}

// Two stride-2 convolutions (kernel 3, padding 1, V -> V channels) with swish in between.
// Token j depends on raw steps up to 4j + 3, so the tokenizer is causal at token granularity.
class ConvSubsampler {
 public:
  ConvSubsampler() = default;
  ConvSubsampler(std::size_t channels, Rng& rng);

  // [B x L x V] -> [B x L' x V]; L >= 4.
  Var operator()(const Var& x) const;
  // Token j computed directly from raw history [T x V] (row-major), with T >= 4j + 4.
  std::vector<double> token_at(std::span<const double> raw, std::size_t steps, std::size_t j) const;

  void collect(ParamList& out, const std::string& prefix) const;
  std::size_t channels() const { return channels_; }

  Var w1, b1, w2, b2;

 private:
  std::size_t channels_ = 0;
};

enum class ConvVariant {
  kDepthwisePointwise,
  kPointwiseDepthwisePointwise,
  kDepthwiseOnly,
  kPointwiseOnly,
  kNone,
};

ConvVariant parse_conv_variant(std::string_view name);
std::string_view to_string(ConvVariant v);

// Residual block: x + swish(BN(stages(LN(x)))). Depth-wise stages use causal (left-only)
// padding, so output t never sees inputs after t.
class TemporalConvModule {
 public:
  enum class Stage { kDepthwise, kPointwise };

  struct StepCache {
    std::vector<std::deque<std::vector<double>>> history;  // per stage: previous inputs of depth-wise stages
  };

  TemporalConvModule() = default;
  TemporalConvModule(std::size_t channels, std::size_t kernel, ConvVariant variant, Rng& rng,
                     double bn_momentum = 0.1, double norm_eps = 1e-5);

  Var operator()(const Var& x, bool training, const std::vector<double>& row_mask = {});
  // One timestep in eval mode, carrying depth-wise history in `cache`.
  std::vector<double> step(std::span<const double> x, StepCache& cache) const;
  StepCache make_cache() const;

  // Sets every stage weight and bias to zero (pure residual).
  void zero_block();

  void collect(ParamList& out, const std::string& prefix) const;
  void collect_buffers(BufferList& out, const std::string& prefix);
  void sync_from_buffers() { bn_.sync_from_buffers(); }

  ConvVariant variant() const { return variant_; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::size_t kernel() const { return kernel_; }

  std::vector<Var> weights;
  std::vector<Var> biases;

 private:
  std::size_t channels_ = 0;
  std::size_t kernel_ = 15;
  ConvVariant variant_ = ConvVariant::kDepthwisePointwise;
  std::vector<Stage> stages_;
  LayerNorm ln_;
  BatchNorm bn_;
};

}  // namespace timely
