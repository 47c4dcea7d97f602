#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "timely/errors.hpp"
#include "timely/model.hpp"

using namespace timely;
using timely::testing::random_array;
using timely::testing::random_batch;
using timely::testing::tiny_config;

namespace {

// Runs one training-mode forward so batch-norm statistics exist for eval mode.
void warm_up(Model& m, const SequenceBatch& b) { m.forward(b, Mode::kTrain); }

std::size_t count_prefix(const Model& m, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& p : m.parameters())
    if (p.name.find(prefix) != std::string::npos) n += p.var.value().size();
  return n;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(ModelConfig, JsonRoundTripAndValidation) {
  ModelConfig c = tiny_config();
  c.gammas = {0.5, 0.9};
  c.form = RetentionForm::kRecurrent;
  c.conv_variant = ConvVariant::kPointwiseOnly;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  nlohmann::json bad = c.to_json();
  bad["hedas"] = 3;
  EXPECT_THROW(ModelConfig::from_json(bad), ConfigError);
  nlohmann::json wrong_type = c.to_json();
  wrong_type["layers"] = "two";
  try {
    ModelConfig::from_json(wrong_type);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layers"), std::string::npos);
  }
}

TEST(ModelConfig, RotationRemovalRequiresDecayRemoval) {
  ModelConfig c = tiny_config();
  c.ablation.no_rotation = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ablation.no_decay = true;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.schedule().gammas, (std::vector<double>{1.0, 1.0}));
}

TEST(ModelConfig, DefaultScheduleAndHashScope) {
  ModelConfig c = tiny_config();
  EXPECT_EQ(c.schedule().gammas, DecaySchedule::default_for(2).gammas);
  ModelConfig other = c;
  other.head = HeadKind::kClassification;
  other.seed = 99;
  other.form = RetentionForm::kParallel;
  EXPECT_EQ(c.backbone_hash(), other.backbone_hash());
  other.layers = 3;
  EXPECT_NE(c.backbone_hash(), other.backbone_hash());
}

TEST(Model, DeterministicInit) {
  Model a(tiny_config(5)), b(tiny_config(5)), c(tiny_config(6));
  EXPECT_EQ(a.snapshot(), b.snapshot());
  EXPECT_NE(a.snapshot(), c.snapshot());
}

TEST(Model, ZeroLayersIsInputProjectionOnly) {
  ModelConfig c = tiny_config();
  c.layers = 0;
  c.ablation.no_subsampler = true;
  Model m(c);
  const SequenceBatch b = random_batch(2, 5, 2, 3);
  const ForwardResult f = m.forward(b, Mode::kEval);
  const auto params = m.parameters();
  const NdArray& w = params[0].var.value();
  const NdArray& bias = params[1].var.value();
  ASSERT_EQ(params[0].name, "input_proj.weight");
  const NdArray& sos = params[2].var.value();
  const NdArray& e = f.embeddings.value();
  ASSERT_EQ(e.shape(), (Shape{2, 6, 16}));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(e[(r * 6) * 16 + j], sos[j]);
    for (std::size_t p = 1; p < 6; ++p)
      for (std::size_t j = 0; j < 16; ++j) {
        double s = bias[j];
        for (std::size_t i = 0; i < 2; ++i) s += b.values[(r * 5 + p - 1) * 2 + i] * w[i * 16 + j];
        EXPECT_NEAR(e[(r * 6 + p) * 16 + j], s, 1e-14);
      }
  }
}

TEST(Model, FormsGiveSameEmbeddings) {
  const SequenceBatch b = random_batch(2, 40, 2, 4);
  NdArray ref;
  for (RetentionForm f : {RetentionForm::kParallel, RetentionForm::kRecurrent, RetentionForm::kChunkwise}) {
    ModelConfig c = tiny_config();
    c.form = f;
    Model m(c);
    const NdArray e = m.forward(b, Mode::kTrain).embeddings.value();
    if (ref.size() == 1) ref = e;
    EXPECT_LT(nd::max_abs_diff(e, ref), 1e-9) << to_string(f);
  }
}

TEST(Model, EndToEndCausality) {
  for (bool tokenizer : {true, false}) {
    ModelConfig c = tiny_config(7);
    c.ablation.no_subsampler = !tokenizer;
    Model m(c);
    const std::size_t t_raw = 32;
    const std::size_t tokens = tokenizer ? 8 : 32;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      const SequenceBatch b = random_batch(1, t_raw, 2, 100 + trial);
      warm_up(m, b);
      const NdArray base = m.forward(b, Mode::kEval).embeddings.value();
      const std::size_t tok = Rng(trial).below(tokens);
      SequenceBatch p = b;
      const std::size_t step = tokenizer ? 4 : 1;
      for (std::size_t s = tok * step; s < (tok + 1) * step; ++s) p.values[s * 2] += 1.5;
      const NdArray out = m.forward(p, Mode::kEval).embeddings.value();
      const std::size_t d = c.d_model();
      // Position 0 is the start token; token i sits at position i + 1.
      for (std::size_t i = 0; i < (tok + 1) * d; ++i) ASSERT_EQ(out[i], base[i]) << "trial " << trial;
      bool changed = false;
      for (std::size_t i = (tok + 1) * d; i < out.size(); ++i) changed |= out[i] != base[i];
      EXPECT_TRUE(changed);
    }
  }
}

TEST(Model, TimestampsWithTokenizerIsConfigError) {
  Model m(tiny_config());
  SequenceBatch b = random_batch(1, 8, 2, 1);
  b.timestamps = {{1, 2, 3, 4, 5, 6, 7, 8}};
  EXPECT_THROW(m.forward(b, Mode::kTrain), ConfigError);
}

TEST(Model, PretrainNeedsTwoTokens) {
  ModelConfig c = tiny_config();
  c.use_sos = false;
  Model m(c);
  EXPECT_THROW(m.pretrain_loss(random_batch(1, 4, 2, 1), Mode::kTrain), InputError);  // one token
  EXPECT_NO_THROW(m.pretrain_loss(random_batch(1, 8, 2, 1), Mode::kTrain));
}

TEST(Model, IdentityModelLossIsMeanSquaredStep) {
  ModelConfig c;
  c.variates = 2;
  c.layers = 0;
  c.heads = 1;
  c.head_dim = 2;
  c.ablation.no_subsampler = true;
  c.use_sos = false;
  Model m(c);
  for (auto& p : m.parameters()) {
    NdArray& v = p.var.mutable_value();
    v.fill(0.0);
    if (p.name.ends_with(".weight")) v = NdArray::identity(2);
  }
  const SequenceBatch b = random_batch(3, 9, 2, 8);
  double expect = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t t = 0; t + 1 < 9; ++t)
      for (std::size_t v = 0; v < 2; ++v) {
        const double d = b.values[(r * 9 + t + 1) * 2 + v] - b.values[(r * 9 + t) * 2 + v];
        expect += d * d;
      }
  expect /= 3.0 * 8.0 * 2.0;
  EXPECT_NEAR(m.pretrain_loss(b, Mode::kTrain).value().item(), expect, 1e-14);
}

TEST(Model, SingleClassEventStreamLossVanishes) {
  ModelConfig c = tiny_config();
  c.input = InputKind::kEvents;
  c.variates = 3;
  Model m(c);
  SequenceBatch b;
  b.values = NdArray(Shape{1, 6, 3});
  for (std::size_t t = 0; t < 6; ++t) b.values[t * 3] = 1.0;
  b.codes = {{0, 0, 0, 0, 0, 0}};
  b.timestamps = {{1, 2, 4, 4, 9, 10}};
  warm_up(m, b);
  double prev = 1e9;
  for (double logit : {5.0, 20.0, 60.0}) {
    for (auto& p : m.parameters()) {
      if (p.name == "head.weight") p.var.mutable_value().fill(0.0);
      if (p.name == "head.bias") p.var.mutable_value() = NdArray(Shape{3}, std::vector<double>{logit, 0.0, 0.0});
    }
    const double loss = m.pretrain_loss(b, Mode::kEval).value().item();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(Model, ParameterCountAudit) {
  ModelConfig c = tiny_config();
  const std::size_t full = Model(c).parameter_count();
  Model ref(c);
  const std::size_t sub = count_prefix(ref, "subsampler.");
  const std::size_t conv = count_prefix(ref, ".temporal_conv.");
  EXPECT_GT(sub, 0u);
  EXPECT_GT(conv, 0u);
  ModelConfig a = c;
  a.ablation.no_subsampler = true;
  EXPECT_EQ(Model(a).parameter_count(), full - sub);
  a = c;
  a.ablation.no_temporal_conv = true;
  EXPECT_EQ(Model(a).parameter_count(), full - conv);
  a = c;
  a.ablation.no_decay = true;
  EXPECT_EQ(Model(a).parameter_count(), full);  // decay and rotation carry no weights
  a.ablation.no_rotation = true;
  EXPECT_EQ(Model(a).parameter_count(), full);
  a.ablation.no_subsampler = true;
  a.ablation.no_temporal_conv = true;
  EXPECT_EQ(Model(a).parameter_count(), full - sub - conv);
}

TEST(Model, PaddingDoesNotLeakIntoValidRows) {
  ModelConfig c = tiny_config();
  c.input = InputKind::kEvents;
  c.variates = 4;
  c.head = HeadKind::kClassification;
  Model m(c);
  SequenceBatch b;
  b.values = NdArray(Shape{2, 5, 4});
  const std::vector<std::vector<std::int64_t>> codes = {{1, 2, 3}, {0, 1, 2, 3, 0}};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < codes[r].size(); ++i) b.values[(r * 5 + i) * 4 + codes[r][i]] = 1.0;
  b.codes = codes;
  b.lengths = {3, 5};
  b.timestamps = {{1, 3, 4, 4, 4}, {2, 3, 5, 9, 12}};
  warm_up(m, b);
  const NdArray p1 = m.predict(b);
  SequenceBatch junk = b;
  junk.values[(0 * 5 + 4) * 4 + 2] = 7.0;  // padded slot of row 0
  const NdArray p2 = m.predict(junk);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(p1.shape(), (Shape{2, 2}));
}

TEST(Model, GenerateHorizonOneEqualsForwardPrediction) {
  Model m(tiny_config(3));
  const SequenceBatch b = random_batch(2, 16, 2, 9);
  warm_up(m, b);
  const NdArray g = m.generate(b, 1);
  const ForwardResult f = m.forward(b, Mode::kEval);
  const NdArray pred = m.head_output(f).value();
  const std::size_t p = pred.shape()[1];
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t v = 0; v < 2; ++v) EXPECT_NEAR(g[r * 2 + v], pred[(r * p + p - 1) * 2 + v], 1e-10);
}

TEST(Model, RecurrentRolloutMatchesParallelRecompute) {
  for (bool tokenizer : {true, false}) {
    ModelConfig c = tiny_config(4);
    c.ablation.no_subsampler = !tokenizer;
    c.form = RetentionForm::kParallel;
    Model m(c);
    const std::size_t t = 16;
    SequenceBatch b = random_batch(1, t, 2, 10);
    warm_up(m, b);
    const std::size_t horizon = 20;
    const NdArray g = m.generate(b, horizon);
    std::vector<double> raw(b.values.data().begin(), b.values.data().end());
    double worst = 0.0;
    for (std::size_t h = 0; h < horizon; ++h) {
      SequenceBatch cur;
      cur.values = NdArray(Shape{1, raw.size() / 2, 2}, raw);
      const NdArray pred = m.head_output(m.forward(cur, Mode::kEval)).value();
      const std::size_t p = pred.shape()[1];
      for (std::size_t v = 0; v < 2; ++v) {
        worst = std::max(worst, std::abs(pred[(p - 1) * 2 + v] - g[h * 2 + v]));
      }
      const std::size_t reps = tokenizer ? 4 : 1;
      for (std::size_t k = 0; k < reps; ++k) raw.insert(raw.end(), g.raw() + h * 2, g.raw() + h * 2 + 2);
    }
    EXPECT_LT(worst, 1e-8) << (tokenizer ? "tokenizer" : "raw");
  }
}

TEST(Model, ZeroWeightModelEmitsBias) {
  ModelConfig c = tiny_config();
  c.ablation.no_temporal_conv = true;
  Model m(c);
  for (auto& p : m.parameters()) p.var.mutable_value().fill(0.0);
  for (auto& p : m.parameters())
    if (p.name == "head.bias") p.var.mutable_value() = NdArray(Shape{2}, std::vector<double>{0.25, -1.5});
  const NdArray g = m.generate(random_batch(1, 8, 2, 11), 6);
  for (std::size_t h = 0; h < 6; ++h) {
    EXPECT_EQ(g[h * 2], 0.25);
    EXPECT_EQ(g[h * 2 + 1], -1.5);
  }
}

TEST(Model, GenerateErrors) {
  ModelConfig c = tiny_config();
  c.head = HeadKind::kClassification;
  Model cls(c);
  EXPECT_THROW(cls.generate(random_batch(1, 8, 2, 1), 3), TaskError);
  Model m(tiny_config());
  warm_up(m, random_batch(1, 8, 2, 1));
  EXPECT_THROW(m.generate(random_batch(1, 8, 2, 1), 0), InputError);
  EXPECT_THROW(m.generate(random_batch(1, 10, 2, 1), 2), InputError);
  ModelConfig e = tiny_config();
  e.input = InputKind::kEvents;
  Model ev(e);
  EXPECT_THROW(ev.generate(random_batch(1, 8, 2, 1), 3), TaskError);
}

TEST(Model, CheckpointRoundTripIsBitwise) {
  Model m(tiny_config(12));
  const SequenceBatch b = random_batch(2, 16, 2, 13);
  warm_up(m, b);
  const auto path = temp_file("timely_model_ckpt.bin");
  m.save(path);
  Model back = Model::load(path);
  EXPECT_EQ(back.snapshot(), m.snapshot());
  EXPECT_EQ(back.forward(b, Mode::kEval).embeddings.value(), m.forward(b, Mode::kEval).embeddings.value());
  std::filesystem::remove(path);
}

TEST(Model, BackboneTransferAndHashMismatch) {
  Model pre(tiny_config(12));
  const SequenceBatch b = random_batch(2, 16, 2, 14);
  warm_up(pre, b);
  const auto path = temp_file("timely_backbone.bin");
  pre.save(path);
  ModelConfig fc = tiny_config(77);
  fc.head = HeadKind::kClassification;
  fc.num_classes = 3;
  Model fine(fc);
  fine.load_backbone(path);
  const auto a = pre.parameters();
  const auto f = fine.parameters();
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i].name.rfind("head.", 0) == 0) continue;
    EXPECT_EQ(f[i].var.value(), a[i].var.value()) << f[i].name;
  }
  ModelConfig other = tiny_config();
  other.layers = 1;
  Model mismatch(other);
  EXPECT_THROW(mismatch.load_backbone(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Model, CorruptCheckpointIsCheckpointError) {
  const auto path = temp_file("timely_bad_ckpt.bin");
  {
    std::ofstream os(path);
    os << "garbage";
  }
  EXPECT_THROW(Model::load(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Model, TaskLossAndPredictShapes) {
  ModelConfig c = tiny_config();
  c.head = HeadKind::kRegression;
  Model m(c);
  const SequenceBatch b = random_batch(3, 12, 2, 15);
  EXPECT_TRUE(std::isfinite(m.task_loss(b, {0.1, 0.2, 0.3}, Mode::kTrain).value().item()));
  EXPECT_EQ(m.predict(b).shape(), (Shape{3, 1}));
  EXPECT_THROW(m.pretrain_loss(b, Mode::kTrain), TaskError);
}
