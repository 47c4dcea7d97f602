#include "timely/cli/app.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "timely/tensor_io.hpp"

#ifndef TIMELY_GIT_DESCRIBE
#define TIMELY_GIT_DESCRIBE "unknown"
#endif

namespace timely::cli {

using json = nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
    case ErrorKind::kConfig: return kUsage;
    case ErrorKind::kDimension:
    case ErrorKind::kContract:
    case ErrorKind::kInput:
    case ErrorKind::kState:
    case ErrorKind::kTask:
    case ErrorKind::kCheckpoint: return kData;
    case ErrorKind::kTraining: return kNumeric;
  }
  return kInternal;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown field " + (where.empty() ? key : where + "." + key));
  }
}

template <class T>
void get_if(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid value for " + (where.empty() ? std::string(key) : where + "." + key));
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, {"seed", "model", "data", "train", "split", "finetune_fraction", "checkpoint", "forecast", "bench"}, "");
  RunConfig c;
  get_if(j, "seed", c.seed, "");
  if (j.contains("model")) {
    if (!j.at("model").is_object()) throw ConfigError("model must be an object");
    c.model = j.at("model");
    ModelConfig::from_json(c.model);  // early validation of names and values
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"signal", "cohort", "path", "vocab"}, "data");
    const int kinds = int(d.contains("signal")) + int(d.contains("cohort")) + int(d.contains("path"));
    if (kinds > 1) throw ConfigError("data takes exactly one of signal, cohort or path");
    if (d.contains("cohort")) {
      c.data.kind = DataSection::Kind::kCohort;
      c.data.cohort = EventCohortSpec::from_json(d.at("cohort"));
      c.data.seed_given = d.at("cohort").contains("seed");
    } else if (d.contains("path")) {
      c.data.kind = DataSection::Kind::kFile;
      std::string p;
      get_if(d, "path", p, "data");
      c.data.path = p;
    } else if (d.contains("signal")) {
      c.data.signal = SignalSpec::from_json(d.at("signal"));
      c.data.seed_given = d.at("signal").contains("seed");
    }
    get_if(d, "vocab", c.data.vocab, "data");
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"epochs", "patience", "batch_size", "max_steps", "lr", "warmup_steps", "clip_norm", "beta1", "beta2",
                       "eps"},
                   "train");
    get_if(t, "epochs", c.schedule.epochs, "train");
    get_if(t, "patience", c.schedule.patience, "train");
    get_if(t, "batch_size", c.schedule.batch_size, "train");
    get_if(t, "max_steps", c.schedule.max_steps, "train");
    get_if(t, "lr", c.adam.lr, "train");
    get_if(t, "warmup_steps", c.adam.warmup_steps, "train");
    get_if(t, "clip_norm", c.adam.clip_norm, "train");
    get_if(t, "beta1", c.adam.beta1, "train");
    get_if(t, "beta2", c.adam.beta2, "train");
    get_if(t, "eps", c.adam.eps, "train");
    c.epochs_given = t.contains("epochs");
    c.schedule.validate();
    if (!(c.adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  }
  get_if(j, "split", c.split, "");
  if (c.split.size() != 3) throw ConfigError("split must list three fractions (train, valid, test)");
  get_if(j, "finetune_fraction", c.finetune_fraction, "");
  if (!(c.finetune_fraction > 0.0 && c.finetune_fraction <= 1.0)) throw ConfigError("finetune_fraction must lie in (0, 1]");
  if (j.contains("checkpoint")) {
    std::string p;
    get_if(j, "checkpoint", p, "");
    c.checkpoint = p;
  }
  if (j.contains("forecast")) {
    const json& f = j.at("forecast");
    reject_unknown(f, {"series", "prompt", "horizon", "train_tokens"}, "forecast");
    get_if(f, "series", c.forecast.series, "forecast");
    get_if(f, "prompt", c.forecast.prompt, "forecast");
    get_if(f, "horizon", c.forecast.horizon, "forecast");
    get_if(f, "train_tokens", c.forecast.train_tokens, "forecast");
  }
  if (j.contains("bench")) {
    const json& b = j.at("bench");
    reject_unknown(b, {"lengths", "mechanisms", "heads", "head_dim", "batch", "repetitions", "chunk_size", "gamma"}, "bench");
    get_if(b, "lengths", c.bench.lengths, "bench");
    if (b.contains("mechanisms")) {
      std::vector<std::string> names;
      get_if(b, "mechanisms", names, "bench");
      c.bench.mechanisms.clear();
      for (const auto& n : names) c.bench.mechanisms.push_back(parse_mechanism(n));
    }
    get_if(b, "heads", c.bench.heads, "bench");
    get_if(b, "head_dim", c.bench.head_dim, "bench");
    get_if(b, "batch", c.bench.batch, "bench");
    get_if(b, "repetitions", c.bench.repetitions, "bench");
    get_if(b, "chunk_size", c.bench.chunk_size, "bench");
    get_if(b, "gamma", c.bench.gamma, "bench");
  }
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = model;
  json d;
  switch (data.kind) {
    case DataSection::Kind::kSignal: {
      SignalSpec s = data.signal;
      if (!data.seed_given) s.seed = seed;
      d["signal"] = s.to_json();
      break;
    }
    case DataSection::Kind::kCohort: {
      EventCohortSpec s = data.cohort;
      if (!data.seed_given) s.seed = seed;
      d["cohort"] = s.to_json();
      break;
    }
    case DataSection::Kind::kFile: d["path"] = data.path.string(); break;
  }
  if (data.vocab) d["vocab"] = data.vocab;
  j["data"] = d;
  j["train"] = {{"epochs", schedule.epochs},     {"patience", schedule.patience}, {"batch_size", schedule.batch_size},
                {"max_steps", schedule.max_steps}, {"lr", adam.lr},             {"warmup_steps", adam.warmup_steps},
                {"clip_norm", adam.clip_norm},     {"beta1", adam.beta1},       {"beta2", adam.beta2},
                {"eps", adam.eps}};
  j["split"] = split;
  j["finetune_fraction"] = finetune_fraction;
  if (checkpoint) j["checkpoint"] = checkpoint->string();
  j["forecast"] = {{"series", forecast.series},
                   {"prompt", forecast.prompt},
                   {"horizon", forecast.horizon},
                   {"train_tokens", forecast.train_tokens}};
  std::vector<std::string> mech;
  for (Mechanism m : bench.mechanisms) mech.emplace_back(to_string(m));
  j["bench"] = {{"lengths", bench.lengths},         {"mechanisms", mech},
                {"heads", bench.heads},             {"head_dim", bench.head_dim},
                {"batch", bench.batch},             {"repetitions", bench.repetitions},
                {"chunk_size", bench.chunk_size},   {"gamma", bench.gamma}};
  return j;
}

LoadedData load_data(const RunConfig& config) {
  LoadedData out;
  const DataSection& d = config.data;
  switch (d.kind) {
    case DataSection::Kind::kSignal: {
      SignalSpec s = d.signal;
      if (!d.seed_given) s.seed = config.seed;
      SignalData sig = gen_signal(s);
      out.all.data = sig.batch;
      // Regression label: total trend rise of the first variate.
      const std::size_t t = s.length, v = s.variates;
      for (std::size_t i = 0; i < s.count; ++i) {
        out.all.labels.push_back(sig.trend[(i * t + t - 1) * v] - sig.trend[i * t * v]);
        out.ids.push_back(std::to_string(i));
      }
      out.signal = std::move(sig);
      break;
    }
    case DataSection::Kind::kCohort: {
      EventCohortSpec s = d.cohort;
      if (!d.seed_given) s.seed = config.seed;
      Cohort c = gen_cohort(s);
      out.all = {std::move(c.batch), std::move(c.labels)};
      out.ids = std::move(c.ids);
      out.events = true;
      out.cohort_spec = s;
      break;
    }
    case DataSection::Kind::kFile: {
      const std::string ext = d.path.extension().string();
      if (!std::filesystem::exists(d.path)) throw InputError("data file not found: " + d.path.string());
      if (ext == ".jsonl") {
        Cohort c = read_cohort_jsonl(d.path, d.vocab);
        out.all = {std::move(c.batch), std::move(c.labels)};
        out.ids = std::move(c.ids);
        out.events = true;
      } else if (ext == ".csv") {
        out.all.data = read_signal_csv(d.path);
      } else if (ext == ".ndar") {
        out.all.data.values = load_ndar(d.path);
        if (out.all.data.values.shape().size() != 3) throw InputError("signal container must be [N x T x V]");
      } else {
        throw InputError("unsupported data file extension '" + ext + "' (expected .csv, .ndar or .jsonl)");
      }
      if (!out.events) {
        for (std::size_t i = 0; i < out.all.data.batch(); ++i) out.ids.push_back(std::to_string(i));
      }
      break;
    }
  }
  return out;
}

ModelConfig model_config_for(const RunConfig& config, const LoadedData& data) {
  json m = config.model;
  if (!m.contains("input")) m["input"] = data.events ? "events" : "continuous";
  if (!m.contains("variates")) m["variates"] = data.all.data.variates();
  if (!m.contains("seed")) m["seed"] = config.seed;
  ModelConfig c = ModelConfig::from_json(m);
  if (c.variates != data.all.data.variates()) {
    throw ConfigError("model.variates (" + std::to_string(c.variates) + ") does not match the data (" +
                      std::to_string(data.all.data.variates()) + ")");
  }
  if ((c.input == InputKind::kEvents) != data.events) throw ConfigError("model.input does not match the data kind");
  return c;
}

// ---------------------------------------------------------------------------

namespace {

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--seed", f.seed, "Run seed (overrides the config)");
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"timely: retention-based sequence models for time series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TIMELY_GIT_DESCRIBE);
  CommonFlags flags;
  CommandOptions opts;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic signal or event cohort");
  auto* pretrain = app.add_subcommand("pretrain", "Next-token pre-training");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a pre-trained backbone on a labelled subset");
  finetune->add_option("--checkpoint", opts.checkpoint, "Pre-trained checkpoint");
  auto* forecast = app.add_subcommand("forecast", "Autoregressive rollout with CSV and SVG output");
  forecast->add_option("--checkpoint", opts.checkpoint, "Next-token checkpoint");
  forecast->add_option("--horizon", opts.horizon, "Tokens to generate");
  auto* classify = app.add_subcommand("classify", "Classify sequences (trains from scratch without --checkpoint)");
  classify->add_option("--checkpoint", opts.checkpoint, "Classification checkpoint");
  auto* bench = app.add_subcommand("bench", "Time retention forms against sequence length");
  bench->add_option("--lengths", opts.lengths, "Sequence lengths")->delimiter(',');
  bench->add_option("--mechanisms", opts.mechanisms, "parallel, recurrent, chunkwise, full-attention-stub")->delimiter(',');
  bench->add_option("--repetitions", opts.repetitions, "Timed repetitions per length");
  bench->add_option("--batch", opts.batch, "Sequences per timing");
  auto* ablate = app.add_subcommand("ablate", "Train the ablation variants and tabulate metrics");
  auto* selftest = app.add_subcommand("selftest", "Fast internal consistency checks");
  for (auto* c : {gen, pretrain, finetune, forecast, classify, bench, ablate, selftest}) add_common(c, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const auto t0 = std::chrono::steady_clock::now();
    CLI::App* cmd = app.get_subcommands().front();
    RunConfig config = RunConfig::from_json(read_config_file(flags.config));
    if (flags.seed) config.seed = *flags.seed;
    if (opts.checkpoint) config.checkpoint = *opts.checkpoint;
    if (opts.horizon) config.forecast.horizon = *opts.horizon;
    if (!opts.lengths.empty()) config.bench.lengths = opts.lengths;
    if (!opts.mechanisms.empty()) {
      config.bench.mechanisms.clear();
      for (const auto& n : opts.mechanisms) config.bench.mechanisms.push_back(parse_mechanism(n));
    }
    if (opts.repetitions) config.bench.repetitions = *opts.repetitions;
    if (opts.batch) config.bench.batch = *opts.batch;

    const std::filesystem::path out = flags.out;
    std::filesystem::create_directories(out);
    RunContext ctx{cmd->get_name(), flags.config, config, out, {}};
    int code = kOk;
    const std::string& name = ctx.command;
    if (name == "gen") code = cmd_gen(ctx);
    else if (name == "pretrain") code = cmd_pretrain(ctx);
    else if (name == "finetune") code = cmd_finetune(ctx);
    else if (name == "forecast") code = cmd_forecast(ctx);
    else if (name == "classify") code = cmd_classify(ctx);
    else if (name == "bench") code = cmd_bench(ctx);
    else if (name == "ablate") code = cmd_ablate(ctx);
    else code = cmd_selftest(ctx);

    ctx.timings["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json manifest;
    manifest["command"] = ctx.command;
    manifest["config_path"] = flags.config;
    manifest["config"] = config.to_json();
    manifest["seed"] = config.seed;
    manifest["git_describe"] = TIMELY_GIT_DESCRIBE;
    manifest["out_dir"] = out.string();
    manifest["timings"] = ctx.timings;
    manifest["exit_code"] = code;
    std::ofstream(out / "manifest.json") << manifest.dump(2) << "\n";
    return code;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace timely::cli
