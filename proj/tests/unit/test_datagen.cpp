#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <fstream>
#include <set>

#include "timely/datagen.hpp"
#include "timely/errors.hpp"

using namespace timely;

namespace {

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(GenSignal, NoiselessSinusoidPeaksAtPeriod) {
  SignalSpec s;
  s.trend = TrendKind::kNone;
  s.seasonal = {{2.0, 16.0, 0.3}};
  s.noise = 0.0;
  s.length = 256;
  s.count = 1;
  s.randomize_phase = false;
  const SignalData d = gen_signal(s);
  for (std::size_t t = 0; t < 256; ++t) {
    EXPECT_NEAR(d.batch.values[t], 2.0 * std::sin(2.0 * std::numbers::pi * t / 16.0 + 0.3), 1e-12);
  }
  // DFT magnitude peak at bin 256/16.
  std::size_t best = 0;
  double best_mag = 0.0;
  for (std::size_t k = 1; k < 128; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < 256; ++t)
      acc += d.batch.values[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t) / 256.0);
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  EXPECT_EQ(best, 16u);
}

TEST(GenSignal, NoiselessLinearIsAffine) {
  SignalSpec s;
  s.trend = TrendKind::kLinear;
  s.seasonal.clear();
  s.noise = 0.0;
  s.length = 50;
  s.count = 2;
  s.intercept = 0.5;
  const SignalData d = gen_signal(s);
  for (std::size_t r = 0; r < 2; ++r) {
    const double slope = d.batch.values[r * 50 + 1] - d.batch.values[r * 50];
    for (std::size_t t = 0; t < 50; ++t) EXPECT_NEAR(d.batch.values[r * 50 + t], 0.5 + slope * t, 1e-12);
  }
}

TEST(GenSignal, NoiseMomentsWithinThreeSigma) {
  SignalSpec s;
  s.noise = 0.3;
  s.length = 4096;
  s.count = 1;
  s.seed = 12;
  const SignalData d = gen_signal(s);
  double m = 0.0, v = 0.0;
  const double t = 4096.0;
  for (double e : d.noise.data()) m += e;
  m /= t;
  for (double e : d.noise.data()) v += (e - m) * (e - m);
  v /= t;
  EXPECT_LT(std::abs(m), 3.0 * 0.3 / std::sqrt(t));
  // Variance of the sample variance of a Gaussian is 2 sigma^4 / T.
  EXPECT_LT(std::abs(v - 0.09), 3.0 * std::sqrt(2.0) * 0.09 / std::sqrt(t));
}

TEST(GenSignal, ComponentsSumExactlyAndSeedIsDeterministic) {
  SignalSpec s;
  s.trend = TrendKind::kPiecewise;
  s.variates = 3;
  s.seasonal = {{1.0, 20.0, 0.0}, {0.3, 7.0, 1.0}};
  s.count = 4;
  s.length = 64;
  const SignalData a = gen_signal(s), b = gen_signal(s);
  EXPECT_EQ(a.batch.values, b.batch.values);
  for (std::size_t i = 0; i < a.batch.values.size(); ++i) {
    EXPECT_EQ(a.batch.values[i], a.trend[i] + a.seasonal[i] + a.noise[i]);
  }
}

TEST(GenSignal, SpecValidation) {
  SignalSpec s;
  s.trend = TrendKind::kNone;
  s.seasonal.clear();
  EXPECT_THROW(s.validate(), ConfigError);
  s = SignalSpec{};
  s.noise = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(SignalSpec::from_json({{"lenght", 3}}), ConfigError);
  EXPECT_EQ(SignalSpec::from_json(SignalSpec{}.to_json()).to_json(), SignalSpec{}.to_json());
}

TEST(GenCohort, InvariantsHold) {
  EventCohortSpec s;
  s.subjects = 50;
  const Cohort c = gen_cohort(s);
  ASSERT_EQ(c.batch.batch(), 50u);
  for (std::size_t r = 0; r < 50; ++r) {
    EXPECT_GE(c.batch.length(r), 10u);
    for (std::size_t i = 0; i < c.batch.length(r); ++i) {
      EXPECT_GT(c.batch.timestamps[r][i], 0);
      if (i) EXPECT_GE(c.batch.timestamps[r][i], c.batch.timestamps[r][i - 1]);
      EXPECT_EQ(c.batch.values[(r * c.batch.steps() + i) * s.vocab + c.batch.codes[r][i]], 1.0);
    }
  }
}

TEST(GenCohort, UninformativeLimitIsChance) {
  EventCohortSpec s;
  s.classes = 2;
  s.subjects = 200;
  s.code_signal = 0.0;
  s.gap_ranges = {{1, 4}, {1, 4}};
  const Cohort c = gen_cohort(s);
  EXPECT_DOUBLE_EQ(bayes_accuracy(s, c.batch, c.labels), 0.5);
}

TEST(GenCohort, SeparableLimitIsPerfect) {
  EventCohortSpec s;
  s.code_signal = 1.0;
  s.subjects = 100;
  const Cohort c = gen_cohort(s);
  EXPECT_DOUBLE_EQ(bayes_accuracy(s, c.batch, c.labels), 1.0);
}

TEST(GenCohort, BayesRuleMatchesBruteForceEnumeration) {
  EventCohortSpec s;
  s.subjects = 60;
  s.classes = 3;
  s.vocab = 6;
  s.gap_ranges = {{1, 2}, {2, 5}, {1, 8}};
  const Cohort c = gen_cohort(s);
  const auto pred = bayes_predictions(s, c.batch);
  for (std::size_t r = 0; r < 60; ++r) {
    // Independent likelihood from the generative description (products, not log sums).
    std::vector<double> like(3, 1.0);
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < c.batch.length(r); ++i) {
        const auto code = c.batch.codes[r][i];
        const double in = code % 3 == static_cast<std::int64_t>(k) ? s.code_signal / 2.0 : 0.0;
        like[k] *= (1.0 - s.code_signal) / 6.0 + in;
        if (i) {
          const auto gap = c.batch.timestamps[r][i] - c.batch.timestamps[r][i - 1];
          const auto [lo, hi] = s.gap_ranges[k];
          like[k] *= (gap >= lo && gap <= hi) ? 1.0 / double(hi - lo + 1) : 0.0;
        }
      }
    }
    const auto best = std::max_element(like.begin(), like.end()) - like.begin();
    EXPECT_EQ(pred[r], best) << "subject " << r;
  }
}

TEST(Split, ExactSizes) {
  const Split s = split(10, {0.8, 0.1, 0.1}, 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.valid.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, DeterministicDisjointAndCovering) {
  const Split a = split(97, {0.8, 0.1, 0.1}, 5), b = split(97, {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::size_t> all;
  for (const auto* part : {&a.train, &a.valid, &a.test}) {
    for (std::size_t i : *part) EXPECT_TRUE(all.insert(i).second) << "duplicate " << i;
  }
  EXPECT_EQ(all.size(), 97u);
  EXPECT_EQ(*all.rbegin(), 96u);
}

TEST(Split, Errors) {
  EXPECT_THROW(split(3, {0.8, 0.1, 0.1}, 1), InputError);
  EXPECT_THROW(split(10, {0.8, 0.1, 0.2}, 1), InputError);
}

TEST(Split, FinetuneSubset) {
  const Split s = split(100, {0.8, 0.1, 0.1}, 2);
  const auto sub = subset(s.train, 0.2, 3);
  EXPECT_EQ(sub.size(), 16u);
  for (std::size_t i : sub) EXPECT_NE(std::find(s.train.begin(), s.train.end(), i), s.train.end());
  EXPECT_EQ(sub, subset(s.train, 0.2, 3));
}

TEST(Files, SignalCsvRoundTrip) {
  SignalSpec s;
  s.count = 3;
  s.length = 20;
  s.variates = 2;
  const SignalData d = gen_signal(s);
  const auto path = temp_file("timely_signal.csv");
  write_signal_csv(path, d.batch);
  const SequenceBatch back = read_signal_csv(path);
  EXPECT_EQ(back.values, d.batch.values);
  std::filesystem::remove(path);
}

TEST(Files, CohortJsonlRoundTrip) {
  EventCohortSpec s;
  s.subjects = 12;
  const Cohort c = gen_cohort(s);
  const auto path = temp_file("timely_cohort.jsonl");
  write_cohort_jsonl(path, c);
  const Cohort back = read_cohort_jsonl(path, s.vocab);
  EXPECT_EQ(back.batch.values, c.batch.values);
  EXPECT_EQ(back.batch.timestamps, c.batch.timestamps);
  EXPECT_EQ(back.batch.codes, c.batch.codes);
  EXPECT_EQ(back.labels, c.labels);
  EXPECT_EQ(back.ids, c.ids);
  std::filesystem::remove(path);
}

TEST(Files, MalformedInputsAreInputErrors) {
  const auto path = temp_file("timely_bad.csv");
  {
    std::ofstream os(path);
    os << "t,v1\n0,1.0\n2,3.0\n";
  }
  EXPECT_THROW(read_signal_csv(path), InputError);
  {
    std::ofstream os(path);
    os << "{\"id\": 1, \"events\": [[0, 5], [1, 3]]}\n";
  }
  EXPECT_THROW(read_cohort_jsonl(path, 4), InputError);
  std::filesystem::remove(path);
}
