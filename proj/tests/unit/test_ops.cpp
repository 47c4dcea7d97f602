#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "timely/errors.hpp"
#include "timely/ops.hpp"

using namespace timely;
using timely::testing::max_grad_error;
using timely::testing::random_array;

namespace {

// Weighted sum with fixed random weights so every output element influences the loss differently.
Var probe(const Var& y, std::uint64_t seed) {
  return sum(mul(y, Var::constant(random_array(y.shape(), seed))));
}

class OpGrad : public ::testing::TestWithParam<std::uint64_t> {};

}  // namespace

TEST_P(OpGrad, Elementwise) {
  const std::uint64_t s = GetParam();
  Var a = Var::parameter(random_array({3, 4}, s), "a");
  Var b = Var::parameter(random_array({4}, s + 1), "b");
  Var pos = Var::parameter(nd::add(random_array({3, 4}, s + 2), NdArray(Shape{3, 4}, 2.0)), "pos");
  EXPECT_LT(max_grad_error({a, b}, [&] { return probe(add(a, b), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a, b}, [&] { return probe(sub(a, b), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a, b}, [&] { return probe(mul(a, b), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a, pos}, [&] { return probe(div(a, pos), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a}, [&] { return probe(exp(a), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({pos}, [&] { return probe(log(pos), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a}, [&] { return probe(sigmoid(a), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a}, [&] { return probe(swish(a), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a}, [&] { return probe(square(a), 99); }), 1e-4);
  EXPECT_LT(max_grad_error({a}, [&] { return mean(mul_scalar(add_scalar(a, 0.5), 3.0)); }), 1e-4);
  const NdArray mask = NdArray::from_rows({{1, 0, 1, 0}, {0, 1, 1, 0}, {1, 1, 1, 1}});
  EXPECT_LT(max_grad_error({a}, [&] { return probe(apply_mask(a, mask), 99); }), 1e-4);
}

TEST_P(OpGrad, Matmul) {
  const std::uint64_t s = GetParam();
  Var a = Var::parameter(random_array({2, 3, 4}, s), "a");
  Var b = Var::parameter(random_array({4, 5}, s + 1), "b");
  Var c = Var::parameter(random_array({2, 4, 2}, s + 2), "c");
  EXPECT_LT(max_grad_error({a, b}, [&] { return probe(matmul(a, b), 7); }), 1e-4);
  EXPECT_LT(max_grad_error({a, c}, [&] { return probe(matmul(a, c), 7); }), 1e-4);
}

TEST_P(OpGrad, Shaping) {
  const std::uint64_t s = GetParam();
  Var a = Var::parameter(random_array({2, 5, 3}, s), "a");
  Var b = Var::parameter(random_array({2, 2, 3}, s + 1), "b");
  EXPECT_LT(max_grad_error({a}, [&] { return probe(slice(a, 1, 1, 4), 5); }), 1e-4);
  EXPECT_LT(max_grad_error({a, b}, [&] { return probe(concat({a, b}, 1), 5); }), 1e-4);
  EXPECT_LT(max_grad_error({a}, [&] { return probe(reshape(a, {10, 3}), 5); }), 1e-4);
  EXPECT_LT(max_grad_error({a}, [&] { return probe(mean_over_time(a, {1, 0}, {4, 5}), 5); }), 1e-4);
}

TEST_P(OpGrad, Norms) {
  const std::uint64_t s = GetParam();
  Var x = Var::parameter(random_array({3, 4, 5}, s), "x");
  Var g = Var::parameter(random_array({5}, s + 1), "g");
  Var b = Var::parameter(random_array({5}, s + 2), "b");
  EXPECT_LT(max_grad_error({x, g, b}, [&] { return probe(layer_norm(x, g, b), 3); }), 1e-4);
  BatchNormState state(5);
  EXPECT_LT(max_grad_error({x, g, b}, [&] { return probe(batch_norm(x, g, b, state, true), 3); }), 1e-4);
  const std::vector<double> rows = {1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0};
  EXPECT_LT(max_grad_error({x, g, b}, [&] { return probe(batch_norm(x, g, b, state, true, rows), 3); }), 1e-4);
  state.has_stats = true;
  EXPECT_LT(max_grad_error({x, g, b}, [&] { return probe(batch_norm(x, g, b, state, false), 3); }), 1e-4);
}

TEST_P(OpGrad, Losses) {
  const std::uint64_t s = GetParam();
  Var p = Var::parameter(random_array({4, 3}, s), "p");
  const NdArray target = random_array({4, 3}, s + 1);
  EXPECT_LT(max_grad_error({p}, [&] { return mse_loss(p, target); }), 1e-4);
  EXPECT_LT(max_grad_error({p}, [&] { return mse_loss(p, target, {1, 0, 1, 1}); }), 1e-4);
  EXPECT_LT(max_grad_error({p}, [&] { return cross_entropy(p, {0, 2, 1, 2}); }), 1e-4);
  EXPECT_LT(max_grad_error({p}, [&] { return cross_entropy(p, {0, 2, 1, 2}, {1, 1, 0, 1}); }), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGrad, ::testing::Values(1u, 2u, 3u));

TEST(Ops, SwishAtZero) {
  EXPECT_EQ(swish(Var::constant(NdArray(Shape{1}, 0.0))).value()[0], 0.0);
}

TEST(Ops, LayerNormConstantRowIsZero) {
  Var x = Var::constant(NdArray(Shape{2, 6}, 3.25));
  Var g = Var::constant(NdArray(Shape{6}, 1.0));
  Var b = Var::constant(NdArray(Shape{6}, 0.0));
  const NdArray y = layer_norm(x, g, b, 1e-5).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ops, LayerNormUnitMoments) {
  Var x = Var::constant(random_array({5, 16}, 9, 3.0));
  Var g = Var::constant(NdArray(Shape{16}, 1.0));
  Var b = Var::constant(NdArray(Shape{16}, 0.0));
  const NdArray y = layer_norm(x, g, b, 0.0).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 16; ++c) m += y[r * 16 + c];
    m /= 16.0;
    for (std::size_t c = 0; c < 16; ++c) v += (y[r * 16 + c] - m) * (y[r * 16 + c] - m);
    v /= 16.0;
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-10);
  }
}

TEST(Ops, BatchNormEvalMatchesTrainWithUnitMomentum) {
  Var x = Var::constant(random_array({4, 6, 3}, 21, 2.0));
  Var g = Var::constant(random_array({3}, 22));
  Var b = Var::constant(random_array({3}, 23));
  BatchNormState state(3);
  state.momentum = 1.0;
  const NdArray train = batch_norm(x, g, b, state, true).value();
  const NdArray eval = batch_norm(x, g, b, state, false).value();
  EXPECT_LT(nd::max_abs_diff(train, eval), 1e-6);

  // Hand oracle for the recorded statistics.
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < 24; ++r) m += x.value()[r * 3 + c];
    m /= 24.0;
    for (std::size_t r = 0; r < 24; ++r) v += std::pow(x.value()[r * 3 + c] - m, 2);
    v /= 24.0;
    EXPECT_NEAR(state.running_mean[c], m, 1e-14);
    EXPECT_NEAR(state.running_var[c], v, 1e-14);
  }
}

TEST(Ops, BatchNormEvalWithoutStatsIsStateError) {
  Var x = Var::constant(random_array({4, 3}, 1));
  Var g = Var::constant(NdArray(Shape{3}, 1.0));
  Var b = Var::constant(NdArray(Shape{3}, 0.0));
  BatchNormState state(3);
  EXPECT_THROW(batch_norm(x, g, b, state, false), StateError);
}

TEST(Ops, BatchNormMaskIgnoresPaddedRows) {
  NdArray xv = random_array({4, 2}, 5);
  NdArray padded = xv;
  padded[3 * 2] = 1e6;  // row 3 is padding
  Var g = Var::constant(NdArray(Shape{2}, 1.0));
  Var b = Var::constant(NdArray(Shape{2}, 0.0));
  BatchNormState s1(2), s2(2);
  const std::vector<double> mask = {1, 1, 1, 0};
  batch_norm(Var::constant(xv), g, b, s1, true, mask);
  batch_norm(Var::constant(padded), g, b, s2, true, mask);
  EXPECT_EQ(s1.running_mean, s2.running_mean);
  EXPECT_EQ(s1.running_var, s2.running_var);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  const NdArray p = softmax_rows(random_array({3, 5}, 4, 50.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += p[r * 5 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, CrossEntropySaturatesToZero) {
  NdArray logits(Shape{3, 2});
  for (std::size_t r = 0; r < 3; ++r) logits[r * 2] = 50.0;
  EXPECT_LT(cross_entropy(Var::constant(logits), {0, 0, 0}).value().item(), 1e-20);
}

TEST(Ops, BroadcastViolationRaises) {
  EXPECT_THROW(add(Var::constant(NdArray(Shape{2, 3})), Var::constant(NdArray(Shape{2}))), DimensionError);
}
