#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "timely/datagen.hpp"
#include "timely/errors.hpp"
#include "timely/ops.hpp"
#include "timely/training.hpp"

using namespace timely;
using timely::testing::random_array;
using timely::testing::random_batch;
using timely::testing::tiny_config;

namespace {

ParamList one_param(const NdArray& v) { return {{"w", Var::parameter(v, "w")}}; }

Dataset signal_dataset(std::size_t count, std::size_t length, std::uint64_t seed) {
  SignalSpec s;
  s.count = count;
  s.length = length;
  s.variates = 2;
  s.seasonal = {{1.0, 16.0, 0.0}};
  s.seed = seed;
  return {gen_signal(s).batch, {}};
}

}  // namespace

TEST(Adam, ZeroGradientIsFixedPoint) {
  const NdArray w0 = random_array({3, 2}, 1);
  ParamList p = one_param(w0);
  OptimState st = OptimState::make(p);
  for (int i = 0; i < 10; ++i) adam_step(p, {NdArray(Shape{3, 2})}, st);
  EXPECT_EQ(p[0].var.value(), w0);
  EXPECT_EQ(st.step, 10u);
}

TEST(Adam, ConstantGradientStepApproachesLrSign) {
  AdamConfig c;
  c.warmup_steps = 0;
  c.clip_norm = 0.0;
  c.lr = 0.01;
  ParamList p = one_param(NdArray(Shape{3}));
  OptimState st = OptimState::make(p, c);
  const NdArray g(Shape{3}, std::vector<double>{0.5, -2.0, 1e-3});
  NdArray before = p[0].var.value();
  for (int i = 0; i < 2000; ++i) {
    before = p[0].var.value();
    adam_step(p, {g}, st);
  }
  // Closed form: with constant g both bias-corrected moments are exact, so the step is lr*g/(|g|+eps).
  for (std::size_t j = 0; j < 3; ++j) {
    const double step = p[0].var.value()[j] - before[j];
    EXPECT_NEAR(step, -c.lr * g[j] / (std::abs(g[j]) + c.eps), 1e-12);
    EXPECT_NEAR(std::abs(step), c.lr, 1e-7);
  }
}

TEST(Adam, DeterministicTrajectories) {
  auto run = [] {
    ParamList p = one_param(random_array({4}, 2));
    OptimState st = OptimState::make(p);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) adam_step(p, {rng.normal_array({4})}, st);
    return p[0].var.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamList p = {{"layers.0.ffn.in.weight", Var::parameter(NdArray(Shape{2}), "x")}};
  OptimState st = OptimState::make(p);
  try {
    adam_step(p, {NdArray(Shape{2}, std::vector<double>{1.0, NAN})}, st);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.0.ffn.in.weight"), std::string::npos);
  }
  EXPECT_EQ(p[0].var.value(), NdArray(Shape{2}));
}

TEST(Adam, WarmupAndClipping) {
  AdamConfig c;
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 0), c.lr / 100.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 49), c.lr / 2.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 100), c.lr);
  std::vector<NdArray> g = {NdArray(Shape{2}, std::vector<double>{3.0, 4.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[0][1], 0.8, 1e-15);
}

TEST(GradCheck, LinearModelNearMachineEpsilon) {
  Var w = Var::parameter(random_array({4, 3}, 4), "w");
  Var b = Var::parameter(random_array({3}, 5), "b");
  const Var x = Var::constant(random_array({5, 4}, 6));
  const NdArray probe = random_array({5, 3}, 7);
  const GradCheckReport r =
      grad_check({{"w", w}, {"b", b}}, [&] { return sum(mul(add(matmul(x, w), b), Var::constant(probe))); });
  ASSERT_TRUE(r.pass());
  for (const auto& blk : r.blocks) EXPECT_LT(blk.max_rel_error, 1e-8) << blk.name;
}

TEST(GradCheck, FaultInjectionFlagsOnlyTheCorruptBlock) {
  Var a = Var::parameter(random_array({3}, 8), "a");
  Var b = Var::parameter(random_array({3}, 9), "b");
  // exp with a backward that is off by 10%.
  auto bad_exp = [](const Var& x) {
    NdArray y = x.value();
    for (double& v : y.data()) v = std::exp(v);
    return make_op(y, {x}, [x, y](const NdArray& g) { accumulate_grad(x, nd::scale(nd::mul(g, y), 1.1)); });
  };
  const GradCheckReport r = grad_check({{"a", a}, {"b", b}}, [&] { return add(sum(bad_exp(a)), sum(exp(b))); });
  EXPECT_FALSE(r.pass());
  EXPECT_FALSE(r.blocks[0].pass);
  EXPECT_TRUE(r.blocks[1].pass);
}

TEST(GradCheck, TinyModelSampled) {
  // Full sweep lives in the acceptance binary; here a sampled pass over every block.
  ModelConfig c = tiny_config(3);
  Model m(c);
  const GradCheckReport r = grad_check(m, {random_batch(2, 16, 2, 4), {}}, 1e-4, 1e-5, 12);
  for (const auto& b : r.blocks) EXPECT_TRUE(b.pass) << b.name << " " << b.max_rel_error;
  EXPECT_EQ(r.blocks.size(), m.parameters().size());
}

TEST(Fit, EarlyStoppingRestoresBest) {
  ModelConfig c = tiny_config(5);
  c.layers = 1;
  Model m(c);
  const Dataset train = signal_dataset(8, 32, 1);
  const Dataset valid = signal_dataset(4, 32, 2);
  TrainSchedule s;
  s.epochs = 6;
  s.patience = 2;
  s.batch_size = 4;
  AdamConfig adam;
  adam.lr = 0.05;  // large enough that validation loss wobbles
  adam.warmup_steps = 1;
  const TrainResult r = fit(m, train, valid, s, adam);
  const double restored = evaluate(m, valid, 4).loss;
  EXPECT_DOUBLE_EQ(restored, r.best_valid_loss);
  EXPECT_LE(restored, r.final_valid_loss);
}

TEST(Fit, ZeroEpochsEqualsFrozenEvaluation) {
  ModelConfig c = tiny_config(6);
  c.head = HeadKind::kRegression;
  Model m(c);
  Dataset d = signal_dataset(6, 16, 3);
  d.labels = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  m.forward(d.data, Mode::kTrain);
  const TrainRecord frozen = evaluate(m, d, 4);
  TrainSchedule s;
  s.epochs = 0;
  s.batch_size = 4;
  const TrainResult r = fit(m, d, d, s);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(format_train_record(r.records[0]), format_train_record(frozen));
}

TEST(Fit, DeterministicRecords) {
  auto run = [] {
    Model m(tiny_config(9));
    TrainSchedule s;
    s.epochs = 2;
    s.batch_size = 4;
    s.seed = 4;
    const TrainResult r = fit(m, signal_dataset(8, 16, 5), signal_dataset(4, 16, 6), s);
    std::string out;
    for (const auto& rec : r.records) out += format_train_record(rec) + "\n";
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainRecordCsv, HeaderAndEmptyMetrics) {
  EXPECT_EQ(train_record_header(), "step,epoch,split,loss,accuracy,mae,auprc");
  TrainRecord r{3, 1, "train", 0.5, NAN, 0.25, NAN};
  EXPECT_EQ(format_train_record(r), "3,1,train,0.5,,0.25,");
}

TEST(TrainSchedule, Defaults) {
  EXPECT_EQ(TrainSchedule::pretrain_default().epochs, 20u);
  EXPECT_EQ(TrainSchedule::finetune_default().epochs, 5u);
  TrainSchedule s;
  s.patience = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}
