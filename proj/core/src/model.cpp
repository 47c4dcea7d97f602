#include "timely/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <algorithm>
#include <cstdio>
#include <map>

#include "timely/errors.hpp"
#include "timely/tensor_io.hpp"

namespace timely {

using nlohmann::json;

std::string_view to_string(InputKind k) { return k == InputKind::kContinuous ? "continuous" : "events"; }

std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::kNextToken: return "next_token";
    case HeadKind::kClassification: return "classification";
    case HeadKind::kRegression: return "regression";
  }
  return "next_token";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "next_token") return HeadKind::kNextToken;
  if (name == "classification") return HeadKind::kClassification;
  if (name == "regression") return HeadKind::kRegression;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

InputKind parse_input_kind(std::string_view name) {
  if (name == "continuous") return InputKind::kContinuous;
  if (name == "events") return InputKind::kEvents;
  throw ConfigError("unknown input kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

DecaySchedule ModelConfig::schedule() const {
  if (ablation.no_decay) return DecaySchedule::uniform(heads, 1.0);
  if (!gammas.empty()) {
    DecaySchedule s{gammas};
    s.validate();
    return s;
  }
  if (gamma) return DecaySchedule::uniform(heads, *gamma);
  return DecaySchedule::default_for(heads);
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("model.") + field + " must be positive");
  };
  positive(variates, "variates");
  positive(heads, "heads");
  positive(head_dim, "head_dim");
  positive(value_dim, "value_dim");
  positive(ffn_expansion, "ffn_expansion");
  positive(chunk_size, "chunk_size");
  positive(conv_kernel, "conv_kernel");
  if (!ablation.no_rotation && head_dim % 2 != 0) throw ConfigError("model.head_dim must be even for rotation");
  if (ablation.no_rotation && !ablation.no_decay) {
    throw ConfigError("ablation.no_rotation requires ablation.no_decay: the decay is defined through the relative "
                      "position mechanism");
  }
  if (!gammas.empty() && gammas.size() != heads) {
    throw ConfigError("model.gammas has " + std::to_string(gammas.size()) + " entries for " +
                      std::to_string(heads) + " heads");
  }
  schedule().validate();
  if (head == HeadKind::kClassification && num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (!(rotation_base > 0.0)) throw ConfigError("model.rotation_base must be positive");
  if (!(norm_eps >= 0.0)) throw ConfigError("model.norm_eps must be non-negative");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("model.bn_momentum must lie in (0, 1]");
}

json ModelConfig::to_json() const {
  json j;
  j["input"] = std::string(to_string(input));
  j["variates"] = variates;
  j["layers"] = layers;
  j["heads"] = heads;
  j["head_dim"] = head_dim;
  j["value_dim"] = value_dim;
  j["ffn_expansion"] = ffn_expansion;
  j["chunk_size"] = chunk_size;
  j["form"] = std::string(to_string(form));
  j["gammas"] = gammas;
  j["gamma"] = gamma ? json(*gamma) : json(nullptr);
  j["rotation_base"] = rotation_base;
  j["conv_variant"] = std::string(to_string(conv_variant));
  j["conv_kernel"] = conv_kernel;
  j["ablation"] = {{"no_subsampler", ablation.no_subsampler},
                   {"no_temporal_conv", ablation.no_temporal_conv},
                   {"no_decay", ablation.no_decay},
                   {"no_rotation", ablation.no_rotation}};
  j["retention_norm"] = retention_norm;
  j["output_gate"] = output_gate;
  j["use_sos"] = use_sos;
  j["head"] = std::string(to_string(head));
  j["num_classes"] = num_classes;
  j["norm_eps"] = norm_eps;
  j["bn_momentum"] = bn_momentum;
  j["seed"] = seed;
  return j;
}

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid value for model.") + key + ": " + e.what());
  }
}

}  // namespace

ModelConfig ModelConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::vector<std::string> known = {
      "input", "variates", "layers", "heads", "head_dim", "value_dim", "ffn_expansion", "chunk_size", "form",
      "gammas", "gamma", "rotation_base", "conv_variant", "conv_kernel", "ablation", "retention_norm",
      "output_gate", "use_sos", "head", "num_classes", "norm_eps", "bn_momentum", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown field model." + key);
    }
  }
  ModelConfig c;
  std::string s;
  if (j.contains("input")) {
    read_field(j, "input", s);
    c.input = parse_input_kind(s);
  }
  read_field(j, "variates", c.variates);
  read_field(j, "layers", c.layers);
  read_field(j, "heads", c.heads);
  read_field(j, "head_dim", c.head_dim);
  read_field(j, "value_dim", c.value_dim);
  read_field(j, "ffn_expansion", c.ffn_expansion);
  read_field(j, "chunk_size", c.chunk_size);
  if (j.contains("form")) {
    read_field(j, "form", s);
    c.form = parse_retention_form(s);
  }
  read_field(j, "gammas", c.gammas);
  if (j.contains("gamma") && !j.at("gamma").is_null()) {
    double g = 0.0;
    read_field(j, "gamma", g);
    c.gamma = g;
  }
  read_field(j, "rotation_base", c.rotation_base);
  if (j.contains("conv_variant")) {
    read_field(j, "conv_variant", s);
    c.conv_variant = parse_conv_variant(s);
  }
  read_field(j, "conv_kernel", c.conv_kernel);
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    if (!a.is_object()) throw ConfigError("model.ablation must be an object");
    for (const auto& [key, _] : a.items()) {
      if (key != "no_subsampler" && key != "no_temporal_conv" && key != "no_decay" && key != "no_rotation") {
        throw ConfigError("unknown field model.ablation." + key);
      }
    }
    read_field(a, "no_subsampler", c.ablation.no_subsampler);
    read_field(a, "no_temporal_conv", c.ablation.no_temporal_conv);
    read_field(a, "no_decay", c.ablation.no_decay);
    read_field(a, "no_rotation", c.ablation.no_rotation);
  }
  read_field(j, "retention_norm", c.retention_norm);
  read_field(j, "output_gate", c.output_gate);
  read_field(j, "use_sos", c.use_sos);
  if (j.contains("head")) {
    read_field(j, "head", s);
    c.head = parse_head_kind(s);
  }
  read_field(j, "num_classes", c.num_classes);
  read_field(j, "norm_eps", c.norm_eps);
  read_field(j, "bn_momentum", c.bn_momentum);
  read_field(j, "seed", c.seed);
  c.validate();
  return c;
}

std::uint64_t ModelConfig::backbone_hash() const {
  json j = to_json();
  for (const char* k : {"head", "num_classes", "seed", "form", "chunk_size", "bn_momentum", "gammas", "gamma"}) {
    j.erase(k);
  }
  j["schedule"] = schedule().gammas;
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::size_t head_width(const ModelConfig& c) {
  switch (c.head) {
    case HeadKind::kNextToken: return c.variates;
    case HeadKind::kClassification: return c.num_classes;
    case HeadKind::kRegression: return 1;
  }
  return 1;
}

std::vector<std::int64_t> iota_positions(std::size_t n) {
  std::vector<std::int64_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::int64_t>(i);
  return p;
}

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  schedule_ = config_.schedule();
  if (!config_.ablation.no_rotation) angles_ = RotaryAngles::make(config_.head_dim, config_.rotation_base);
  const Rng root(config_.seed);
  const std::size_t d = config_.d_model();
  const std::size_t hv = config_.heads * config_.value_dim;
  if (config_.uses_subsampler()) {
    Rng r = root.fork(1);
    subsampler_ = ConvSubsampler(config_.variates, r);
  }
  {
    Rng r = root.fork(2);
    input_proj_ = Linear(config_.variates, d, true, r);
  }
  if (config_.use_sos) {
    Rng r = root.fork(3);
    sos_ = Var::parameter(init_uniform(r, {1, 1, d}, d), "sos");
  }
  for (std::size_t i = 0; i < config_.layers; ++i) {
    Rng r = root.fork(100 + i);
    DecoderLayer layer;
    layer.norm1 = LayerNorm(d, config_.norm_eps);
    layer.wq = Linear(d, config_.heads * config_.head_dim, false, r);
    layer.wk = Linear(d, config_.heads * config_.head_dim, false, r);
    layer.wv = Linear(d, hv, false, r);
    if (config_.output_gate) layer.gate = Linear(d, hv, false, r);
    if (config_.retention_norm) layer.retention_norm = LayerNorm(hv, config_.norm_eps);
    layer.wo = Linear(hv, d, false, r);
    if (!config_.ablation.no_temporal_conv && config_.conv_variant != ConvVariant::kNone) {
      layer.conv =
          TemporalConvModule(d, config_.conv_kernel, config_.conv_variant, r, config_.bn_momentum, config_.norm_eps);
    }
    layer.norm2 = LayerNorm(d, config_.norm_eps);
    layer.ffn_in = Linear(d, config_.ffn_expansion * d, true, r);
    layer.ffn_out = Linear(config_.ffn_expansion * d, d, true, r);
    layers_.push_back(std::move(layer));
  }
  set_head(config_.head, config_.num_classes);
}

void Model::set_head(HeadKind kind, std::size_t num_classes) {
  config_.head = kind;
  config_.num_classes = num_classes;
  config_.validate();
  Rng r = Rng(config_.seed).fork(7);
  head_ = Linear(config_.d_model(), head_width(config_), true, r);
}

ParamList Model::parameters() const {
  ParamList out;
  if (subsampler_) subsampler_->collect(out, "subsampler");
  input_proj_.collect(out, "input_proj");
  if (sos_.defined()) out.push_back({"sos", sos_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DecoderLayer& l = layers_[i];
    const std::string p = "layers." + std::to_string(i);
    l.norm1.collect(out, p + ".norm1");
    l.wq.collect(out, p + ".retention.wq");
    l.wk.collect(out, p + ".retention.wk");
    l.wv.collect(out, p + ".retention.wv");
    if (l.gate) l.gate->collect(out, p + ".retention.gate");
    if (l.retention_norm) l.retention_norm->collect(out, p + ".retention.norm");
    l.wo.collect(out, p + ".retention.wo");
    if (l.conv) l.conv->collect(out, p + ".temporal_conv");
    l.norm2.collect(out, p + ".norm2");
    l.ffn_in.collect(out, p + ".ffn.in");
    l.ffn_out.collect(out, p + ".ffn.out");
  }
  head_.collect(out, "head");
  return out;
}

BufferList Model::buffers() {
  BufferList out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].conv) layers_[i].conv->collect_buffers(out, "layers." + std::to_string(i) + ".temporal_conv");
  }
  return out;
}

std::vector<NdArray> Model::snapshot() const {
  std::vector<NdArray> out;
  for (const auto& p : parameters()) out.push_back(p.var.value());
  for (const auto& b : const_cast<Model*>(this)->buffers()) out.push_back(*b.array);
  return out;
}

bool Model::has_running_statistics() {
  for (const auto& b : buffers()) {
    if (b.name.ends_with(".has_stats") && (*b.array)[0] == 0.0) return false;
  }
  return true;
}

void Model::restore(const std::vector<NdArray>& values) {
  ParamList params = parameters();
  BufferList bufs = buffers();
  if (values.size() != params.size() + bufs.size()) throw StateError("snapshot does not match model layout");
  std::size_t i = 0;
  for (auto& p : params) p.var.mutable_value() = values[i++];
  for (auto& b : bufs) *b.array = values[i++];
  for (auto& l : layers_)
    if (l.conv) l.conv->sync_from_buffers();
}

NdArray Model::target_tokens(const SequenceBatch& batch) const {
  if (config_.input == InputKind::kEvents || !config_.uses_subsampler()) return batch.values;
  const std::size_t b = batch.batch();
  const std::size_t t = batch.steps();
  const std::size_t v = batch.variates();
  const std::size_t l = subsampled_length(t);
  NdArray out(Shape{b, l, v});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < l; ++j) {
      const std::size_t lo = 4 * j;
      const std::size_t hi = std::min(t, 4 * j + 4);
      for (std::size_t c = 0; c < v; ++c) {
        double s = 0.0;
        for (std::size_t s_i = lo; s_i < hi; ++s_i) s += batch.values[(r * t + s_i) * v + c];
        out[(r * l + j) * v + c] = s / static_cast<double>(hi - lo);
      }
    }
  }
  return out;
}

Var Model::embed(const SequenceBatch& batch, Mode mode, ForwardResult& fwd) {
  (void)mode;
  if (batch.values.rank() != 3) throw DimensionError("batch values must be [B x T x V], got " + shape_str(batch.values.shape()));
  if (batch.variates() != config_.variates) {
    throw DimensionError("model expects " + std::to_string(config_.variates) + " variates, batch has " +
                         std::to_string(batch.variates()));
  }
  if (!batch.lengths.empty() && batch.lengths.size() != batch.batch()) throw InputError("lengths count != batch");
  if (!batch.timestamps.empty() && batch.timestamps.size() != batch.batch()) {
    throw InputError("timestamps count != batch");
  }
  const std::size_t b = batch.batch();
  Var tokens;
  std::vector<std::size_t> tok_len(b);
  if (config_.uses_subsampler()) {
    if (batch.irregular()) {
      throw ConfigError("timestamps supplied while the convolution tokenizer is enabled; irregular inputs require "
                        "ablation.no_subsampler");
    }
    for (std::size_t r = 0; r < b; ++r) {
      if (batch.length(r) != batch.steps()) throw InputError("tokenizer input rows must be full length");
    }
    tokens = (*subsampler_)(Var::constant(batch.values));
    std::fill(tok_len.begin(), tok_len.end(), tokens.shape()[1]);
  } else {
    tokens = Var::constant(batch.values);
    for (std::size_t r = 0; r < b; ++r) {
      tok_len[r] = batch.length(r);
      if (tok_len[r] == 0 || tok_len[r] > batch.steps()) throw InputError("row length out of range");
    }
  }
  fwd.tokens = tokens.value();
  Var emb = input_proj_(tokens);
  const std::size_t d = config_.d_model();
  fwd.offset = 0;
  if (config_.use_sos) {
    Var start = add(Var::constant(NdArray(Shape{b, 1, d})), sos_);
    emb = concat({start, emb}, 1);
    fwd.offset = 1;
  }
  fwd.valid.resize(b);
  for (std::size_t r = 0; r < b; ++r) fwd.valid[r] = tok_len[r] + fwd.offset;
  return emb;
}

Var Model::layer_forward(DecoderLayer& layer, const Var& x, const std::vector<std::vector<std::int64_t>>& ts,
                         const std::vector<std::int64_t>& positions, Mode mode, const std::vector<double>& row_mask) {
  Var a = layer.norm1(x);
  Var q = layer.wq(a);
  Var k = layer.wk(a);
  Var v = layer.wv(a);
  if (angles_) {
    q = rotate(q, positions, *angles_);
    k = rotate(k, positions, *angles_);
  }
  Var r = retention(q, k, v, ts, schedule_, config_.form, config_.chunk_size);
  if (layer.retention_norm) r = (*layer.retention_norm)(r);
  if (layer.gate) r = mul(r, swish((*layer.gate)(a)));
  Var h = add(x, layer.wo(r));
  if (layer.conv) h = (*layer.conv)(h, mode == Mode::kTrain, row_mask);
  Var f = layer.ffn_out(swish(layer.ffn_in(layer.norm2(h))));
  return add(h, f);
}

ForwardResult Model::forward(const SequenceBatch& batch, Mode mode) {
  ForwardResult fwd;
  Var x = embed(batch, mode, fwd);
  const std::size_t b = x.shape()[0];
  const std::size_t p = x.shape()[1];
  std::vector<std::vector<std::int64_t>> ts(b);
  for (std::size_t r = 0; r < b; ++r) {
    if (batch.irregular()) {
      const auto& src = batch.timestamps[r];
      if (src.size() < batch.length(r)) throw InputError("timestamp row shorter than its sequence");
      std::vector<std::int64_t>& row = ts[r];
      row.reserve(p);
      if (fwd.offset) row.push_back(src.front());
      for (std::size_t i = 0; i + fwd.offset < p; ++i) {
        row.push_back(i < batch.length(r) ? src[i] : row.back());
      }
    } else {
      ts[r] = iota_positions(p);
    }
  }
  const std::vector<std::int64_t> positions = iota_positions(p);
  std::vector<double> row_mask(b * p, 0.0);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t i = 0; i < fwd.valid[r]; ++i) row_mask[r * p + i] = 1.0;
  for (auto& layer : layers_) x = layer_forward(layer, x, ts, positions, mode, row_mask);
  fwd.embeddings = x;
  return fwd;
}

Var Model::head_output(const ForwardResult& fwd) const {
  if (config_.head == HeadKind::kNextToken) return head_(fwd.embeddings);
  const std::size_t b = fwd.embeddings.shape()[0];
  std::vector<std::size_t> begin(b, fwd.offset);
  Var pooled = mean_over_time(fwd.embeddings, begin, fwd.valid);
  return head_(pooled);
}

Var Model::pretrain_loss(const SequenceBatch& batch, Mode mode) {
  if (config_.head != HeadKind::kNextToken) throw TaskError("pretrain_loss needs a next-token head");
  ForwardResult fwd = forward(batch, mode);
  const std::size_t b = fwd.embeddings.shape()[0];
  const std::size_t p = fwd.embeddings.shape()[1];
  const std::size_t l_tok = p - fwd.offset;
  if (l_tok < 2) throw InputError("next-token objective needs at least 2 tokens, got " + std::to_string(l_tok));
  for (std::size_t r = 0; r < b; ++r) {
    if (fwd.valid[r] - fwd.offset < 2) throw InputError("a sequence in the batch has fewer than 2 tokens");
  }
  Var pred = slice(head_(fwd.embeddings), 1, 0, p - 1);  // position i predicts token i + 1 - offset
  const std::size_t v = config_.variates;
  std::vector<double> weight(b * (p - 1), 0.0);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t i = 0; i + 1 < fwd.valid[r]; ++i) weight[r * (p - 1) + i] = 1.0;
  const std::size_t first = 1 - fwd.offset;
  if (config_.input == InputKind::kContinuous) {
    const NdArray tokens = target_tokens(batch);
    NdArray target(Shape{b, p - 1, v});
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t i = 0; i + 1 < p; ++i)
        for (std::size_t c = 0; c < v; ++c) target[(r * (p - 1) + i) * v + c] = tokens[(r * l_tok + first + i) * v + c];
    return mse_loss(pred, target, weight);
  }
  if (batch.codes.size() != b) throw InputError("event batch lacks code sequences");
  std::vector<std::int64_t> targets(b * (p - 1), 0);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t i = 0; i + 1 < fwd.valid[r]; ++i) targets[r * (p - 1) + i] = batch.codes[r].at(first + i);
  }
  return cross_entropy(reshape(pred, {b * (p - 1), v}), targets, weight);
}

Var Model::task_loss(const SequenceBatch& batch, const std::vector<double>& labels, Mode mode) {
  if (config_.head == HeadKind::kNextToken) throw TaskError("task_loss needs a classification or regression head");
  ForwardResult fwd = forward(batch, mode);
  Var out = head_output(fwd);
  if (labels.size() != batch.batch()) throw InputError("label count != batch");
  if (config_.head == HeadKind::kClassification) {
    std::vector<std::int64_t> targets;
    for (double l : labels) targets.push_back(static_cast<std::int64_t>(l));
    return cross_entropy(out, targets);
  }
  return mse_loss(out, NdArray(Shape{labels.size(), 1}, labels));
}

NdArray Model::predict(const SequenceBatch& batch) {
  ForwardResult fwd = forward(batch, Mode::kEval);
  Var out = head_output(fwd);
  if (config_.head == HeadKind::kClassification) return softmax_rows(out.value());
  return out.value();
}

// ---------------------------------------------------------------------------
// Recurrent decoding

DecoderState Model::make_state() const {
  DecoderState s;
  for (const auto& l : layers_) {
    s.retention.emplace_back(config_.heads, RetentionState::zeros(config_.head_dim, config_.value_dim));
    s.conv.push_back(l.conv ? l.conv->make_cache() : TemporalConvModule::StepCache{});
  }
  return s;
}

std::vector<double> Model::token_embedding(std::span<const double> token) const { return input_proj_.apply(token); }

std::vector<double> Model::step(std::span<const double> embedding, std::int64_t timestamp, DecoderState& state) const {
  const std::size_t d = config_.d_model();
  const std::size_t heads = config_.heads;
  const std::size_t dk = config_.head_dim;
  const std::size_t dv = config_.value_dim;
  if (embedding.size() != d) throw DimensionError("step embedding width != d_model");
  std::vector<double> x(embedding.begin(), embedding.end());
  const std::int64_t pos = state.position++;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const DecoderLayer& layer = layers_[li];
    const std::vector<double> a = layer.norm1.apply(x);
    std::vector<double> q = layer.wq.apply(a);
    std::vector<double> k = layer.wk.apply(a);
    const std::vector<double> v = layer.wv.apply(a);
    if (angles_) {
      const std::int64_t p[1] = {pos};
      q = rotate(NdArray(Shape{1, q.size()}, q), p, *angles_).storage();
      k = rotate(NdArray(Shape{1, k.size()}, k), p, *angles_).storage();
    }
    std::vector<double> r(heads * dv, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      RetentionState& st = state.retention[li][h];
      double* s = st.s.raw();
      if (st.last_timestamp) {
        if (timestamp < *st.last_timestamp) throw InputError("decoding timestamps must be non-decreasing");
        const double f = std::pow(schedule_.gammas[h], static_cast<double>(timestamp - *st.last_timestamp));
        if (f != 1.0)
          for (std::size_t i = 0; i < dk * dv; ++i) s[i] *= f;
      }
      for (std::size_t a_i = 0; a_i < dk; ++a_i)
        for (std::size_t b_i = 0; b_i < dv; ++b_i) s[a_i * dv + b_i] += k[h * dk + a_i] * v[h * dv + b_i];
      st.last_timestamp = timestamp;
      for (std::size_t a_i = 0; a_i < dk; ++a_i)
        for (std::size_t b_i = 0; b_i < dv; ++b_i) r[h * dv + b_i] += q[h * dk + a_i] * s[a_i * dv + b_i];
    }
    if (layer.retention_norm) r = layer.retention_norm->apply(r);
    if (layer.gate) {
      const std::vector<double> g = layer.gate->apply(a);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] *= swish_scalar(g[i]);
    }
    const std::vector<double> o = layer.wo.apply(r);
    for (std::size_t i = 0; i < d; ++i) x[i] += o[i];
    if (layer.conv) x = layer.conv->step(x, state.conv[li]);
    std::vector<double> hdn = layer.ffn_in.apply(layer.norm2.apply(x));
    for (double& hv : hdn) hv = swish_scalar(hv);
    const std::vector<double> f = layer.ffn_out.apply(hdn);
    for (std::size_t i = 0; i < d; ++i) x[i] += f[i];
  }
  return x;
}

NdArray Model::generate(const SequenceBatch& prompt, std::size_t horizon) {
  if (config_.head != HeadKind::kNextToken) throw TaskError("generate needs a next-token head");
  if (config_.input != InputKind::kContinuous) throw TaskError("generate supports continuous inputs only");
  if (horizon == 0) throw InputError("horizon must be >= 1");
  if (prompt.irregular()) throw InputError("generation prompts must be regularly sampled");
  const std::size_t b = prompt.batch();
  const std::size_t t = prompt.steps();
  const std::size_t v = config_.variates;
  if (prompt.variates() != v) throw DimensionError("prompt variates do not match the model");
  for (std::size_t r = 0; r < b; ++r)
    if (prompt.length(r) != t) throw InputError("generation prompts must be full length");
  const bool tokenized = config_.uses_subsampler();
  if (tokenized && (t < 4 || t % 4 != 0)) {
    throw InputError("tokenized prompts need a length divisible by 4, got " + std::to_string(t));
  }
  NdArray out(Shape{b, horizon, v});
  for (std::size_t r = 0; r < b; ++r) {
    DecoderState state = make_state();
    std::vector<double> raw(prompt.values.raw() + r * t * v, prompt.values.raw() + (r + 1) * t * v);
    std::size_t steps = t;
    std::int64_t clock = 0;
    std::vector<double> hidden;
    if (sos_.defined()) {
      const std::span<const double> e(sos_.value().raw(), config_.d_model());
      hidden = step(e, clock++, state);
    }
    auto feed_token = [&](std::size_t j) {
      std::vector<double> tok = tokenized ? subsampler_->token_at(raw, steps, j)
                                          : std::vector<double>(raw.begin() + j * v, raw.begin() + (j + 1) * v);
      hidden = step(token_embedding(tok), clock++, state);
    };
    std::size_t n_tok = tokenized ? subsampled_length(t) : t;
    for (std::size_t j = 0; j < n_tok; ++j) feed_token(j);
    for (std::size_t h = 0; h < horizon; ++h) {
      const std::vector<double> pred = head_.apply(hidden);
      std::copy(pred.begin(), pred.end(), out.raw() + (r * horizon + h) * v);
      if (h + 1 == horizon) break;
      const std::size_t reps = tokenized ? 4 : 1;
      for (std::size_t k = 0; k < reps; ++k) raw.insert(raw.end(), pred.begin(), pred.end());
      steps += reps;
      feed_token(n_tok++);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "TCKP1", u64 header length, JSON header, then one NDAR1 record per
// parameter and buffer in manifest order.

namespace {

constexpr char kCheckpointMagic[5] = {'T', 'C', 'K', 'P', '1'};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct CheckpointFile {
  json header;
  std::map<std::string, NdArray> tensors;
};

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1ULL << 30)) {
    throw CheckpointError("corrupt checkpoint header");
  }
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("truncated checkpoint header");
  CheckpointFile f;
  try {
    f.header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  for (const char* section : {"parameters", "buffers"}) {
    for (const auto& entry : f.header.at(section)) f.tensors[entry.at("name").get<std::string>()] = read_ndar(is);
  }
  return f;
}

}  // namespace

void Model::save(const std::filesystem::path& path) const {
  json header;
  header["format"] = "timely-checkpoint";
  header["version"] = 1;
  header["config"] = config_.to_json();
  header["seed"] = config_.seed;
  header["config_hash"] = hex64(config_.backbone_hash());
  const ParamList params = parameters();
  BufferList bufs = const_cast<Model*>(this)->buffers();
  header["parameters"] = json::array();
  for (const auto& p : params) header["parameters"].push_back({{"name", p.name}, {"shape", p.var.shape()}});
  header["buffers"] = json::array();
  for (const auto& b : bufs) header["buffers"].push_back({{"name", b.name}, {"shape", b.array->shape()}});
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 5);
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) write_ndar(os, p.var.value());
  for (const auto& b : bufs) write_ndar(os, *b.array);
  if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  CheckpointFile f = read_checkpoint(path);
  Model m(ModelConfig::from_json(f.header.at("config")));
  if (f.header.at("config_hash").get<std::string>() != hex64(m.config_.backbone_hash())) {
    throw CheckpointError("checkpoint config hash does not match its config");
  }
  for (auto& p : m.parameters()) {
    auto it = f.tensors.find(p.name);
    if (it == f.tensors.end() || it->second.shape() != p.var.shape()) {
      throw CheckpointError("checkpoint tensor missing or mis-shaped: " + p.name);
    }
    p.var.mutable_value() = it->second;
  }
  for (auto& b : m.buffers()) {
    auto it = f.tensors.find(b.name);
    if (it == f.tensors.end() || it->second.shape() != b.array->shape()) {
      throw CheckpointError("checkpoint buffer missing or mis-shaped: " + b.name);
    }
    *b.array = it->second;
  }
  for (auto& l : m.layers_)
    if (l.conv) l.conv->sync_from_buffers();
  return m;
}

void Model::load_backbone(const std::filesystem::path& path) {
  CheckpointFile f = read_checkpoint(path);
  const std::string want = hex64(config_.backbone_hash());
  if (f.header.at("config_hash").get<std::string>() != want) {
    throw CheckpointError("config hash mismatch: checkpoint " + f.header.at("config_hash").get<std::string>() +
                          ", model " + want);
  }
  const bool same_head = f.header.at("config").at("head").get<std::string>() == to_string(config_.head);
  for (auto& p : parameters()) {
    const bool is_head = p.name.rfind("head.", 0) == 0;
    if (is_head && !same_head) continue;
    auto it = f.tensors.find(p.name);
    if (it == f.tensors.end() || it->second.shape() != p.var.shape()) {
      if (is_head) continue;
      throw CheckpointError("checkpoint tensor missing or mis-shaped: " + p.name);
    }
    p.var.mutable_value() = it->second;
  }
  for (auto& b : buffers()) {
    auto it = f.tensors.find(b.name);
    if (it != f.tensors.end() && it->second.shape() == b.array->shape()) *b.array = it->second;
  }
  for (auto& l : layers_)
    if (l.conv) l.conv->sync_from_buffers();
}

}  // namespace timely
