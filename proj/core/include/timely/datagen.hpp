#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timely/sequence_batch.hpp"

namespace timely {

enum class TrendKind { kNone, kLinear, kLogistic, kPiecewise };
std::string_view to_string(TrendKind k);
TrendKind parse_trend_kind(std::string_view name);

struct SeasonalComponent {
  double amplitude = 1.0;
  double period = 32.0;  // raw timesteps
  double phase = 0.0;    // radians
};

// values[t] = trend(t) + sum_k a_k sin(2 pi t / P_k + phase_k) + N(0, noise^2), per variate.
struct SignalSpec {
  TrendKind trend = TrendKind::kLinear;
  double trend_scale = 1.0;        // total trend rise over `length` steps (linear / logistic / piecewise)
  double intercept = 0.0;
  double logistic_rate = 8.0;      // steepness in units of 1/length
  std::size_t piecewise_segments = 3;
  std::vector<SeasonalComponent> seasonal = {SeasonalComponent{}};
  double noise = 0.1;
  std::size_t variates = 1;
  std::size_t length = 1024;
  std::size_t count = 64;
  // Per-sequence random phase shift and a multiplicative jitter of trend_scale in
  // [1 - jitter, 1 + jitter], so sequences differ but share their dynamics.
  bool randomize_phase = true;
  double trend_jitter = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SignalSpec from_json(const nlohmann::json& j);
};

struct SignalData {
  SequenceBatch batch;  // values [count x length x variates]
  NdArray trend;        // same shape as values
  NdArray seasonal;
  NdArray noise;
};

SignalData gen_signal(const SignalSpec& spec);

// Irregular event cohort. Class c draws codes from
//   p_c(code) = (1 - s) / V + s * [code % C == c] / |{code : code % C == c}|
// with s = code_signal, and integer gaps uniformly from gap_ranges[c]. Subject i has label i % C.
struct EventCohortSpec {
  std::size_t vocab = 8;
  std::size_t subjects = 400;
  std::size_t classes = 2;
  std::size_t min_events = 10;
  std::size_t max_events = 24;
  double code_signal = 0.3;
  std::vector<std::pair<std::int64_t, std::int64_t>> gap_ranges = {{1, 3}, {3, 8}};
  std::int64_t max_start = 5;  // first timestamp uniform in [1, max_start]
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static EventCohortSpec from_json(const nlohmann::json& j);

  double log_code_prob(std::size_t cls, std::int64_t code) const;
  double log_gap_prob(std::size_t cls, std::int64_t gap) const;
};

struct Cohort {
  SequenceBatch batch;  // one-hot codes [N x max_events x vocab], lengths, timestamps, codes
  std::vector<double> labels;
  std::vector<std::string> ids;
};

Cohort gen_cohort(const EventCohortSpec& spec);

// Bayes-rule predictions from the generator's known likelihoods (equal class priors);
// ties go to the lowest class index.
std::vector<std::int64_t> bayes_predictions(const EventCohortSpec& spec, const SequenceBatch& batch);
double bayes_accuracy(const EventCohortSpec& spec, const SequenceBatch& batch, const std::vector<double>& labels);

// Builds a padded event batch from per-subject (code, timestamp) streams.
SequenceBatch make_event_batch(const std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>>& events,
                               std::size_t vocab);

struct Split {
  std::vector<std::size_t> train, valid, test;
};

// Seeded shuffle, then largest-remainder sizes. Throws InputError if any part is empty or
// the fractions do not sum to 1 within 1e-9.
Split split(std::size_t n, const std::vector<double>& fractions, std::uint64_t seed);
// Deterministic subset of ceil(fraction * |rows|) rows (the fine-tuning subset).
std::vector<std::size_t> subset(const std::vector<std::size_t>& rows, double fraction, std::uint64_t seed);

// CSV with header t,v1..vV; t restarts at 0 for each sequence.
void write_signal_csv(const std::filesystem::path& path, const SequenceBatch& batch);
SequenceBatch read_signal_csv(const std::filesystem::path& path);

// JSON lines: {"id": ..., "events": [[code, timestamp], ...], "label": ...}
void write_cohort_jsonl(const std::filesystem::path& path, const Cohort& cohort);
Cohort read_cohort_jsonl(const std::filesystem::path& path, std::size_t vocab);

}  // namespace timely
