#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timely/convolution.hpp"
#include "timely/nn.hpp"
#include "timely/positional.hpp"
#include "timely/retention.hpp"
#include "timely/sequence_batch.hpp"

namespace timely {

enum class InputKind { kContinuous, kEvents };
enum class HeadKind { kNextToken, kClassification, kRegression };
enum class Mode { kTrain, kEval };

std::string_view to_string(InputKind k);
std::string_view to_string(HeadKind k);
HeadKind parse_head_kind(std::string_view name);
InputKind parse_input_kind(std::string_view name);

struct AblationFlags {
  bool no_subsampler = false;
  bool no_temporal_conv = false;
  bool no_decay = false;
  bool no_rotation = false;

  bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
  InputKind input = InputKind::kContinuous;
  std::size_t variates = 1;  // V for continuous inputs, vocabulary size for events
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t head_dim = 8;   // d_q = d_k
  std::size_t value_dim = 8;  // d_v per head
  std::size_t ffn_expansion = 4;
  std::size_t chunk_size = 64;
  RetentionForm form = RetentionForm::kChunkwise;
  std::vector<double> gammas;           // explicit per-head decays; empty selects the default schedule
  std::optional<double> gamma;          // scalar override applied to every head
  double rotation_base = 10000.0;
  ConvVariant conv_variant = ConvVariant::kDepthwisePointwise;
  std::size_t conv_kernel = 15;
  AblationFlags ablation;
  bool retention_norm = true;
  bool output_gate = false;
  bool use_sos = true;
  HeadKind head = HeadKind::kNextToken;
  std::size_t num_classes = 2;
  double norm_eps = 1e-5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;

  std::size_t d_model() const { return heads * head_dim; }
  bool uses_subsampler() const { return input == InputKind::kContinuous && !ablation.no_subsampler; }
  DecaySchedule schedule() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  // FNV-1a over the architecture fields that shape the backbone (not head, seed, or form).
  std::uint64_t backbone_hash() const;
};

struct DecoderLayer {
  LayerNorm norm1;
  Linear wq, wk, wv, wo;
  std::optional<Linear> gate;
  std::optional<LayerNorm> retention_norm;
  std::optional<TemporalConvModule> conv;
  LayerNorm norm2;
  Linear ffn_in, ffn_out;
};

// Per-sequence decoding state for O(1)-per-token generation.
struct DecoderState {
  std::vector<std::vector<RetentionState>> retention;  // [layer][head]
  std::vector<TemporalConvModule::StepCache> conv;     // [layer]
  std::int64_t position = 0;
};

struct ForwardResult {
  Var embeddings;                    // [B x P x d_model], P = tokens (+1 with the start token)
  std::vector<std::size_t> valid;    // valid positions per row (start token included)
  std::size_t offset = 0;            // 1 when a start token occupies position 0
  NdArray tokens;                    // model-space tokens [B x L_tok x V] (no gradient)
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  ForwardResult forward(const SequenceBatch& batch, Mode mode);
  // Head applied to embeddings: next-token [B x P x V], class logits [B x C], regression [B x 1].
  Var head_output(const ForwardResult& fwd) const;

  // Next-token objective: MSE on continuous tokens, cross-entropy on event codes.
  Var pretrain_loss(const SequenceBatch& batch, Mode mode);
  // Fine-tuning objective for classification (labels are class ids) or regression.
  Var task_loss(const SequenceBatch& batch, const std::vector<double>& labels, Mode mode);
  // Class probabilities [B x C] or regression outputs [B x 1] in eval mode.
  NdArray predict(const SequenceBatch& batch);

  // Ground-truth token targets in prediction space: block means of 4 raw steps when the
  // tokenizer is active, raw values otherwise. [B x L_tok x V]
  NdArray target_tokens(const SequenceBatch& batch) const;

  // Autoregressive rollout: returns [B x horizon x V] predicted tokens.
  NdArray generate(const SequenceBatch& prompt, std::size_t horizon);

  // Swaps the task head, re-initializing its weights from the config seed.
  void set_head(HeadKind kind, std::size_t num_classes = 2);

  ParamList parameters() const;
  BufferList buffers();
  // False until every batch-norm layer has seen a training batch; eval mode needs them.
  bool has_running_statistics();
  std::size_t parameter_count() const { return count_parameters(parameters()); }

  std::vector<NdArray> snapshot() const;
  void restore(const std::vector<NdArray>& values);

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
  // Copies every backbone tensor (and the head when kinds agree) from a checkpoint whose
  // backbone hash equals this model's. Throws CheckpointError on mismatch.
  void load_backbone(const std::filesystem::path& path);

  // One recurrent step for a single sequence; returns the final hidden row.
  std::vector<double> step(std::span<const double> embedding, std::int64_t timestamp, DecoderState& state) const;
  DecoderState make_state() const;

 private:
  Var embed(const SequenceBatch& batch, Mode mode, ForwardResult& fwd);
  Var layer_forward(DecoderLayer& layer, const Var& x, const std::vector<std::vector<std::int64_t>>& ts,
                    const std::vector<std::int64_t>& positions, Mode mode, const std::vector<double>& row_mask);
  std::vector<double> token_embedding(std::span<const double> token) const;

  ModelConfig config_;
  DecaySchedule schedule_;
  std::optional<RotaryAngles> angles_;
  std::optional<ConvSubsampler> subsampler_;
  Linear input_proj_;
  Var sos_;
  std::vector<DecoderLayer> layers_;
  Linear head_;
};

}  // namespace timely
