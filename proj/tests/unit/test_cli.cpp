#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "timely/cli/app.hpp"
#include "timely/cli/bench.hpp"
#include "timely/cli/plot.hpp"

using namespace timely;
using namespace timely::cli;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("timely_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_args(std::vector<std::string> args) {
  args.insert(args.begin(), "timely");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump();
  return p;
}

const json kSmallModel = {{"layers", 1}, {"heads", 2}, {"head_dim", 4}, {"value_dim", 4}, {"chunk_size", 8}, {"conv_kernel", 3}};

}  // namespace

TEST(FlopModel, BoundaryIdentities) {
  for (std::uint64_t h : {1u, 4u, 8u}) {
    for (std::uint64_t d : {8u, 16u, 64u}) {
      const std::uint64_t n2 = 2 * h * d, n6 = 6 * h * d;
      EXPECT_EQ(FlopModel::attention_linear(n2, h, d), FlopModel::attention_quadratic(n2, h, d));
      EXPECT_EQ(FlopModel::attention_quadratic(n6, h, d), FlopModel::linear_total(n6, h, d));
      EXPECT_EQ(FlopModel::linear_total(n6, h, d), 12 * n6 * h * h * d * d);
      EXPECT_EQ(FlopModel::regime(n2 - 1, h, d), "linear");
      EXPECT_EQ(FlopModel::regime(n2, h, d), "mixed");
      EXPECT_EQ(FlopModel::regime(n6 + 1, h, d), "quadratic");
    }
  }
}

TEST(Bench, SlopeOfExactPowerLaw) {
  std::vector<double> x = {512, 1024, 2048, 4096}, y2, y1;
  for (double v : x) {
    y2.push_back(3e-9 * v * v);
    y1.push_back(7e-6 * v);
  }
  EXPECT_NEAR(loglog_slope(x, y2), 2.0, 1e-12);
  EXPECT_NEAR(loglog_slope(x, y1), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(median({5.0, 1.0, 3.0, 2.0, 4.0}), 3.0);
}

TEST(Bench, ConfigValidation) {
  BenchConfig c;
  c.lengths = {16, 32, 64};
  EXPECT_THROW(c.validate(), UsageError);
  c.lengths = {16, 32, 64, 100};
  EXPECT_THROW(c.validate(), UsageError);  // span < 8x
  c.lengths = {16, 32, 64, 128};
  c.repetitions = 4;
  EXPECT_THROW(c.validate(), UsageError);
  c.repetitions = 5;
  EXPECT_NO_THROW(c.validate());
}

TEST(Bench, SmallRunProducesRowsPerLength) {
  BenchConfig c;
  c.lengths = {8, 16, 32, 64};
  c.batch = 2;
  c.mechanisms = {Mechanism::kParallel, Mechanism::kChunkwise, Mechanism::kFullAttention};
  const auto rows = run_bench(c);
  ASSERT_EQ(rows.size(), 12u);
  for (const auto& r : rows) {
    EXPECT_GT(r.median_seconds, 0.0);
    EXPECT_TRUE(std::isfinite(r.slope));
    EXPECT_EQ(r.repetitions, 5u);
  }
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit");
  EXPECT_EQ(run_args({}), kUsage);
  EXPECT_EQ(run_args({"nonsense"}), kUsage);
  EXPECT_EQ(run_args({"gen", "--config", (dir / "missing.json").string(), "--out", dir.string()}), kUsage);
  EXPECT_EQ(run_args({"gen", "--config", write_config(dir, {{"data", {{"signal", {{"lenght", 5}}}}}}).string(), "--out",
                      dir.string()}),
            kUsage);
  EXPECT_EQ(run_args({"finetune", "--out", dir.string()}), kUsage);  // no checkpoint
  EXPECT_EQ(run_args({"bench", "--lengths", "8,16,32", "--out", dir.string()}), kUsage);
  EXPECT_EQ(run_args({"pretrain", "--config", write_config(dir, {{"data", {{"path", (dir / "nope.csv").string()}}}}).string(),
                      "--out", dir.string()}),
            kData);
  EXPECT_EQ(run_args({"ablate", "--config",
                      write_config(dir, {{"model", {{"ablation", {{"no_rotation", true}}}}}}).string(), "--out", dir.string()}),
            kUsage);
}

TEST(Cli, ConfigRejectsUnknownFieldsByName) {
  try {
    RunConfig::from_json({{"train", {{"epoch", 3}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epoch"), std::string::npos);
  }
}

TEST(Cli, ForecastHorizonOneOnIdentityCheckpoint) {
  const fs::path dir = scratch("forecast");
  ModelConfig c;
  c.layers = 0;  // embedding straight into the head
  c.heads = 1;
  c.head_dim = 4;
  c.value_dim = 4;
  Model(c).save(dir / "identity.tckp");
  const json cfg = {{"data", {{"signal", {{"count", 2}, {"length", 64}}}}}, {"forecast", {{"prompt", 32}}}};
  ASSERT_EQ(run_args({"forecast", "--config", write_config(dir, cfg).string(), "--checkpoint",
                      (dir / "identity.tckp").string(), "--horizon", "1", "--out", dir.string()}),
            kOk);
  const std::string csv = slurp(dir / "forecast.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);  // header + one row
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,pred_v1,truth_v1");
  const std::string svg = slurp(dir / "forecast.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("training length"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["command"], "forecast");
  EXPECT_TRUE(manifest.contains("git_describe"));
  EXPECT_TRUE(manifest["timings"].contains("total_seconds"));
}

TEST(Cli, ForecastRejectsClassificationCheckpoint) {
  const fs::path dir = scratch("forecast_task");
  ModelConfig c;
  c.layers = 0;
  c.heads = 1;
  c.head_dim = 4;
  c.value_dim = 4;
  c.head = HeadKind::kClassification;
  Model(c).save(dir / "cls.tckp");
  EXPECT_EQ(run_args({"forecast", "--checkpoint", (dir / "cls.tckp").string(), "--out", dir.string()}), kData);
}

TEST(Cli, PretrainFinetuneIsBitReproducible) {
  const json cfg = {{"data", {{"signal", {{"count", 20}, {"length", 64}}}}},
                    {"model", kSmallModel},
                    {"train", {{"epochs", 2}, {"batch_size", 4}}},
                    {"finetune_fraction", 0.5}};
  std::vector<std::string> metrics;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = scratch("det" + std::to_string(rep));
    const std::string config = write_config(dir, cfg).string();
    ASSERT_EQ(run_args({"pretrain", "--config", config, "--seed", "5", "--out", (dir / "pre").string()}), kOk);
    ASSERT_EQ(run_args({"finetune", "--config", config, "--seed", "5", "--checkpoint", (dir / "pre" / "model.tckp").string(),
                        "--out", (dir / "ft").string()}),
              kOk);
    metrics.push_back(slurp(dir / "pre" / "metrics.csv") + slurp(dir / "ft" / "metrics.csv") +
                      slurp(dir / "ft" / "model.tckp"));
  }
  EXPECT_EQ(metrics[0], metrics[1]);
  EXPECT_NE(metrics[0].find("step,epoch,split,loss,accuracy,mae,auprc"), std::string::npos);
}

TEST(Cli, FinetuneRejectsForeignBackbone) {
  const fs::path dir = scratch("foreign");
  const json pre = {{"data", {{"signal", {{"count", 12}, {"length", 32}}}}},
                    {"model", kSmallModel},
                    {"train", {{"epochs", 1}, {"batch_size", 4}}}};
  ASSERT_EQ(run_args({"pretrain", "--config", write_config(dir, pre).string(), "--out", (dir / "pre").string()}), kOk);
  json ft = pre;
  ft["model"]["layers"] = 2;
  EXPECT_EQ(run_args({"finetune", "--config", write_config(dir, ft).string(), "--checkpoint",
                      (dir / "pre" / "model.tckp").string(), "--out", (dir / "ft").string()}),
            kData);
}

TEST(Cli, ClassifySeparableCohort) {
  const fs::path dir = scratch("separable");
  const json cfg = {{"data", {{"cohort", {{"subjects", 200}, {"code_signal", 1.0}}}}},
                    {"model", kSmallModel},
                    {"train", {{"epochs", 10}, {"batch_size", 16}, {"lr", 3e-3}, {"warmup_steps", 10}}}};
  ASSERT_EQ(run_args({"classify", "--config", write_config(dir, cfg).string(), "--out", dir.string()}), kOk);
  const json s = json::parse(slurp(dir / "summary.json"));
  EXPECT_DOUBLE_EQ(s["bayes_accuracy"].get<double>(), 1.0);
  EXPECT_GE(s["accuracy"].get<double>(), 0.95);
  // The saved classifier evaluates to the same numbers.
  const fs::path again = dir / "again";
  ASSERT_EQ(run_args({"classify", "--config", (dir / "config.json").string(), "--checkpoint", (dir / "model.tckp").string(),
                      "--out", again.string()}),
            kOk);
  EXPECT_EQ(json::parse(slurp(again / "summary.json"))["accuracy"], s["accuracy"]);
}

TEST(Cli, AblateTableAuditAndDeterminism) {
  const json cfg = {{"data", {{"signal", {{"count", 12}, {"length", 64}}}}},
                    {"model", kSmallModel},
                    {"train", {{"epochs", 1}, {"batch_size", 4}}}};
  std::vector<std::string> tables;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = scratch("ablate" + std::to_string(rep));
    ASSERT_EQ(run_args({"ablate", "--config", write_config(dir, cfg).string(), "--out", dir.string()}), kOk);
    tables.push_back(slurp(dir / "ablation.csv"));
  }
  EXPECT_EQ(tables[0], tables[1]);
  std::istringstream is(tables[0]);
  std::string line;
  std::getline(is, line);
  std::map<std::string, long> params;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    params[cells[0]] = std::stol(cells[1]);
    EXPECT_EQ(cells[3], "ok") << line;
    EXPECT_FALSE(cells[4].empty()) << line;
  }
  ASSERT_EQ(params.size(), 5u);
  EXPECT_EQ(params["full"], params["-decay-rotation"]);
  EXPECT_EQ(params["full"], params["-decay"]);
  // Subsampler: two conv1d layers over one channel, kernel 3, with bias.
  EXPECT_EQ(params["full"] - params["-subsampler"], 2 * (3 + 1));
  EXPECT_LT(params["-temporal_conv"], params["full"]);
}

TEST(Cli, AblateOnEventsSharesTheTokenizerFreeRow) {
  const fs::path dir = scratch("ablate_events");
  const json cfg = {{"data", {{"cohort", {{"subjects", 40}}}}}, {"model", kSmallModel}, {"train", {{"epochs", 1}}}};
  ASSERT_EQ(run_args({"ablate", "--config", write_config(dir, cfg).string(), "--out", dir.string()}), kOk);
  const std::string t = slurp(dir / "ablation.csv");
  EXPECT_NE(t.find("-subsampler"), std::string::npos);
  EXPECT_NE(t.find("bypass the tokenizer"), std::string::npos);
}

TEST(Cli, GenIsDeterministic) {
  std::vector<std::string> out;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = scratch("gen" + std::to_string(rep));
    ASSERT_EQ(run_args({"gen", "--seed", "3", "--out", dir.string()}), kOk);
    out.push_back(slurp(dir / "signal.csv") + slurp(dir / "trend.ndar"));
    const fs::path cdir = dir / "cohort";
    ASSERT_EQ(run_args({"gen", "--config", write_config(dir, {{"data", {{"cohort", json::object()}}}}).string(), "--out",
                        cdir.string()}),
              kOk);
    out.back() += slurp(cdir / "cohort.jsonl");
  }
  EXPECT_EQ(out[0], out[1]);
}

TEST(Cli, SelftestPasses) {
  const fs::path dir = scratch("selftest");
  EXPECT_EQ(run_args({"selftest", "--out", dir.string()}), kOk);
}

TEST(Plot, SvgHasAllSeries) {
  const std::string svg = forecast_svg({0.0, 1.0, 0.5}, {0.2, 0.3}, {0.1, 0.4}, 3);
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 5, true);
  std::size_t polylines = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
  EXPECT_EQ(polylines, 3u);
}
