#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timely/cli/bench.hpp"
#include "timely/datagen.hpp"
#include "timely/errors.hpp"
#include "timely/model.hpp"
#include "timely/training.hpp"

namespace timely::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumeric = 4 };

int exit_code_for(ErrorKind kind);

struct DataSection {
  enum class Kind { kSignal, kCohort, kFile } kind = Kind::kSignal;
  SignalSpec signal;
  EventCohortSpec cohort;
  std::filesystem::path path;
  std::size_t vocab = 0;  // event files; 0 infers from the largest code
  bool seed_given = false;  // otherwise generators use the run seed
};

struct ForecastSection {
  std::size_t series = 0;
  std::size_t prompt = 0;        // raw steps; 0 = min(series length, 1024)
  std::size_t horizon = 64;      // tokens
  std::size_t train_tokens = 0;  // training-length marker; 0 = prompt tokens
};

// Resolved configuration for any command. Every JSON key is optional; unknown keys are
// rejected with a ConfigError naming the field.
struct RunConfig {
  std::uint64_t seed = 0;
  nlohmann::json model = nlohmann::json::object();  // merged with data-derived defaults at build time
  DataSection data;
  TrainSchedule schedule;
  AdamConfig adam;
  bool epochs_given = false;  // otherwise the command's default (pre-train 20, fine-tune 5)
  std::vector<double> split = {0.8, 0.1, 0.1};
  double finetune_fraction = 0.2;
  std::optional<std::filesystem::path> checkpoint;
  ForecastSection forecast;
  BenchConfig bench;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct LoadedData {
  Dataset all;
  bool events = false;
  std::vector<std::string> ids;
  std::optional<EventCohortSpec> cohort_spec;  // set for generated cohorts (Bayes ceiling available)
  std::optional<SignalData> signal;            // set for generated signals
};

LoadedData load_data(const RunConfig& config);
// Model config for `data`: the JSON model section with input kind and variates filled from the data.
ModelConfig model_config_for(const RunConfig& config, const LoadedData& data);

// Entry point shared by the executable and the tests. Never throws.
int run(int argc, const char* const* argv);

}  // namespace timely::cli
