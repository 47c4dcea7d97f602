#include <gtest/gtest.h>

#include "timely/metrics.hpp"

using namespace timely;

TEST(Metrics, AccuracyArgmax) {
  const NdArray p = NdArray::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}});
  const std::vector<std::int64_t> y = {0, 1, 1};
  EXPECT_DOUBLE_EQ(accuracy(p, y), 2.0 / 3.0);
}

TEST(Metrics, Mae) {
  const NdArray a(Shape{2}, std::vector<double>{1.0, -1.0});
  const NdArray b(Shape{2}, std::vector<double>{0.5, 1.0});
  EXPECT_DOUBLE_EQ(mean_absolute_error(a, b), 1.25);
}

TEST(Metrics, PerfectScorerHasUnitAuprc) {
  for (int pos_count : {1, 3, 9}) {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 10; ++i) {
      y.push_back(i < pos_count);
      s.push_back(i < pos_count ? 1.0 - 0.01 * i : 0.1 * i - 2.0);
    }
    EXPECT_DOUBLE_EQ(average_precision(s, y), 1.0);
  }
}

TEST(Metrics, AveragePrecisionHandExample) {
  // Ranking: +, -, +, - : AP = (1/2)(1) + (1/2)(2/3).
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
  const std::vector<int> y = {1, 0, 1, 0};
  EXPECT_NEAR(average_precision(s, y), 0.5 + 1.0 / 3.0, 1e-15);
  // All tied: precision = prevalence.
  EXPECT_NEAR(average_precision(std::vector<double>(4, 0.5), y), 0.5, 1e-15);
}

TEST(Metrics, MultiClassAuprcIsMacro) {
  const NdArray p = NdArray::from_rows({{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}});
  const std::vector<std::int64_t> y = {0, 1, 2};
  EXPECT_DOUBLE_EQ(auprc(p, y), 1.0);
}

TEST(Metrics, MajorityBaseline) {
  const std::vector<std::int64_t> y = {0, 1, 1, 1, 2};
  EXPECT_DOUBLE_EQ(majority_accuracy(y), 0.6);
}
