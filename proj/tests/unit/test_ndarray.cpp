#include <gtest/gtest.h>

#include "test_support.hpp"
#include "timely/errors.hpp"
#include "timely/ndarray.hpp"

using namespace timely;
using timely::testing::random_array;

namespace {

NdArray triple_loop(const NdArray& a, const NdArray& b) {
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  NdArray c(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
  return c;
}

}  // namespace

TEST(NdArray, ShapeMatchesData) {
  NdArray a(Shape{2, 3, 4});
  EXPECT_EQ(a.size(), 24u);
  EXPECT_THROW(NdArray(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(NdArray, MatmulIdentity) {
  const NdArray m = random_array({3, 3}, 1);
  EXPECT_EQ(nd::matmul(NdArray::identity(3), m), m);
}

TEST(NdArray, MatmulZero) {
  const NdArray a = NdArray::from_rows({{1, 2}, {3, 4}});
  const NdArray z = NdArray::from_rows({{0}, {0}});
  EXPECT_EQ(nd::matmul(a, z), NdArray::from_rows({{0}, {0}}));
}

TEST(NdArray, MatmulMatchesTripleLoop) {
  const NdArray a = random_array({4, 5}, 7);
  const NdArray b = random_array({5, 3}, 8);
  EXPECT_LT(nd::max_abs_diff(nd::matmul(a, b), triple_loop(a, b)), 1e-14);
}

TEST(NdArray, BatchedMatmulBroadcastsLeadingDims) {
  const NdArray a = random_array({2, 3, 4, 5}, 3);
  const NdArray b = random_array({3, 5, 2}, 4);
  const NdArray c = nd::matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4, 2}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      NdArray ai(Shape{4, 5}, std::vector<double>(a.raw() + (i * 3 + j) * 20, a.raw() + (i * 3 + j + 1) * 20));
      NdArray bj(Shape{5, 2}, std::vector<double>(b.raw() + j * 10, b.raw() + (j + 1) * 10));
      const NdArray ref = triple_loop(ai, bj);
      for (std::size_t e = 0; e < 8; ++e) EXPECT_NEAR(c[(i * 3 + j) * 8 + e], ref[e], 1e-14);
    }
}

TEST(NdArray, MatmulShapeErrorNamesBothShapes) {
  try {
    nd::matmul(NdArray(Shape{2, 3}), NdArray(Shape{4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2 x 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4 x 2]"), std::string::npos) << msg;
  }
}

TEST(NdArray, BroadcastTrailingAlignment) {
  EXPECT_EQ(nd::broadcast_shapes({2, 3, 4}, {4}), (Shape{2, 3, 4}));
  EXPECT_EQ(nd::broadcast_shapes({2, 1, 4}, {3, 1}), (Shape{2, 3, 4}));
  EXPECT_THROW(nd::broadcast_shapes({2, 3}, {4}), DimensionError);
  const NdArray a = NdArray::from_rows({{1, 2, 3}, {4, 5, 6}});
  const NdArray b(Shape{3}, std::vector<double>{10, 20, 30});
  EXPECT_EQ(nd::add(a, b), NdArray::from_rows({{11, 22, 33}, {14, 25, 36}}));
  EXPECT_THROW(nd::add(a, NdArray(Shape{2})), DimensionError);
}

TEST(NdArray, SumToInvertsBroadcast) {
  const NdArray g(Shape{2, 3}, 1.0);
  EXPECT_EQ(nd::sum_to(g, {3}), NdArray(Shape{3}, 2.0));
  EXPECT_EQ(nd::sum_to(g, {2, 1}), NdArray(Shape{2, 1}, 3.0));
}

TEST(NdArray, GemmTransposes) {
  const NdArray a = random_array({5, 4}, 11);  // used as a^T: 4 x 5
  const NdArray b = random_array({3, 5}, 12);  // used as b^T: 5 x 3
  NdArray c(Shape{4, 3});
  nd::gemm(4, 5, 3, a.raw(), true, b.raw(), true, c.raw(), false);
  const NdArray ref = triple_loop(nd::transpose_last2(a), nd::transpose_last2(b));
  EXPECT_LT(nd::max_abs_diff(c, ref), 1e-14);
}
