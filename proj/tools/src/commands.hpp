#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timely/cli/app.hpp"
#include "timely/cli/plot.hpp"

namespace timely::cli {

// Flags that override config fields.
struct CommandOptions {
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> horizon;
  std::vector<std::size_t> lengths;
  std::vector<std::string> mechanisms;
  std::optional<std::size_t> repetitions;
  std::optional<std::size_t> batch;
};

struct RunContext {
  std::string command;
  std::string config_path;
  const RunConfig& config;
  std::filesystem::path out;
  nlohmann::json timings;
};

int cmd_gen(RunContext& ctx);
int cmd_pretrain(RunContext& ctx);
int cmd_finetune(RunContext& ctx);
int cmd_forecast(RunContext& ctx);
int cmd_classify(RunContext& ctx);
int cmd_bench(RunContext& ctx);
int cmd_ablate(RunContext& ctx);
int cmd_selftest(RunContext& ctx);

}  // namespace timely::cli
