#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "timely/metrics.hpp"
#include "timely/positional.hpp"
#include "timely/retention.hpp"
#include "timely/rng.hpp"
#include "timely/tensor_io.hpp"

namespace timely::cli {

using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

json metric(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json record_json(const TrainRecord& r) {
  return {{"step", r.step},          {"epoch", r.epoch},       {"split", r.split}, {"loss", metric(r.loss)},
          {"accuracy", metric(r.accuracy)}, {"mae", metric(r.mae)}, {"auprc", metric(r.auprc)}};
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

TrainSchedule schedule_for(const RunConfig& c, bool finetune) {
  TrainSchedule s = c.schedule;
  if (!c.epochs_given) s.epochs = finetune ? TrainSchedule::finetune_default().epochs : TrainSchedule::pretrain_default().epochs;
  s.seed = c.seed;
  return s;
}

struct Splits {
  Split idx;
  Dataset train, valid, test;
};

Splits make_splits(const RunConfig& c, const LoadedData& d) {
  Splits s;
  s.idx = split(d.all.size(), c.split, c.seed);
  s.train = d.all.select(s.idx.train);
  s.valid = d.all.select(s.idx.valid);
  s.test = d.all.select(s.idx.test);
  return s;
}

ModelConfig with_head(ModelConfig cfg, HeadKind head, std::size_t classes) {
  cfg.head = head;
  if (head == HeadKind::kClassification) cfg.num_classes = classes;
  cfg.validate();
  return cfg;
}

std::size_t class_count(const RunConfig& c, const LoadedData& d) {
  if (c.model.contains("num_classes")) return c.model.at("num_classes").get<std::size_t>();
  if (d.cohort_spec) return d.cohort_spec->classes;
  double mx = 0.0;
  for (double l : d.all.labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx) + 1;
}

void check_labels(const LoadedData& d, const ModelConfig& cfg) {
  if (d.all.labels.size() != d.all.size()) throw InputError("the data carries no labels for this task");
  if (cfg.head != HeadKind::kClassification) return;
  for (double l : d.all.labels) {
    if (l < 0.0 || l != std::floor(l) || l >= static_cast<double>(cfg.num_classes)) {
      throw InputError("label " + fmt(l) + " is not a class id below num_classes = " + std::to_string(cfg.num_classes));
    }
  }
}

void finish_training(RunContext& ctx, Model& model, const TrainResult& r, const Dataset& test, const TrainSchedule& s,
                     json summary) {
  TrainRecord test_rec = evaluate(model, test, s.batch_size, r.steps, r.best_epoch, "test");
  if (!std::isfinite(test_rec.loss)) throw TrainingError("non-finite test loss");
  std::vector<TrainRecord> records = r.records;
  records.push_back(test_rec);
  write_train_records(ctx.out / "metrics.csv", records);
  model.save(ctx.out / "model.tckp");
  summary["parameters"] = model.parameter_count();
  summary["steps"] = r.steps;
  summary["best_epoch"] = r.best_epoch;
  summary["stopped_early"] = r.stopped_early;
  summary["test"] = record_json(test_rec);
  write_json(ctx.out / "summary.json", summary);
  std::printf("test loss %s accuracy %s mae %s auprc %s\n", fmt(test_rec.loss).c_str(), fmt(test_rec.accuracy).c_str(),
              fmt(test_rec.mae).c_str(), fmt(test_rec.auprc).c_str());
}

std::filesystem::path require_checkpoint(const RunConfig& c) {
  if (!c.checkpoint) throw ConfigError("missing field checkpoint (config key or --checkpoint)");
  if (!std::filesystem::exists(*c.checkpoint)) throw InputError("checkpoint not found: " + c.checkpoint->string());
  return *c.checkpoint;
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_gen(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  if (c.data.kind == DataSection::Kind::kFile) throw UsageError("gen needs data.signal or data.cohort, not a file");
  const auto t0 = Clock::now();
  LoadedData d = load_data(c);
  json summary;
  if (d.events) {
    Cohort cohort{d.all.data, d.all.labels, d.ids};
    write_cohort_jsonl(ctx.out / "cohort.jsonl", cohort);
    std::vector<std::int64_t> labels(d.all.labels.begin(), d.all.labels.end());
    summary = {{"kind", "cohort"},
               {"subjects", d.all.size()},
               {"bayes_accuracy", bayes_accuracy(*d.cohort_spec, d.all.data, d.all.labels)},
               {"majority_accuracy", majority_accuracy(labels)}};
  } else {
    write_signal_csv(ctx.out / "signal.csv", d.all.data);
    save_ndar(ctx.out / "signal.ndar", d.all.data.values);
    save_ndar(ctx.out / "trend.ndar", d.signal->trend);
    save_ndar(ctx.out / "seasonal.ndar", d.signal->seasonal);
    save_ndar(ctx.out / "noise.ndar", d.signal->noise);
    summary = {{"kind", "signal"},
               {"count", d.all.size()},
               {"length", d.all.data.steps()},
               {"variates", d.all.data.variates()}};
  }
  write_json(ctx.out / "summary.json", summary);
  ctx.timings["generate_seconds"] = seconds_since(t0);
  std::printf("%s\n", summary.dump().c_str());
  return kOk;
}

int cmd_pretrain(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  LoadedData d = load_data(c);
  const ModelConfig cfg = with_head(model_config_for(c, d), HeadKind::kNextToken, 2);
  Splits s = make_splits(c, d);
  Model model(cfg);
  const TrainSchedule sched = schedule_for(c, false);
  const auto t0 = Clock::now();
  const TrainResult r = fit(model, s.train, s.valid, sched, c.adam);
  ctx.timings["train_seconds"] = seconds_since(t0);
  finish_training(ctx, model, r, s.test, sched, {{"command", "pretrain"}});
  return kOk;
}

int cmd_finetune(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  const auto ckpt = require_checkpoint(c);
  LoadedData d = load_data(c);
  ModelConfig cfg = model_config_for(c, d);
  if (!c.model.contains("head")) cfg.head = d.events ? HeadKind::kClassification : HeadKind::kRegression;
  if (cfg.head == HeadKind::kNextToken) throw ConfigError("invalid value for model.head: finetune needs classification or regression");
  cfg = with_head(cfg, cfg.head, class_count(c, d));
  check_labels(d, cfg);
  Model model(cfg);
  model.load_backbone(ckpt);
  Splits s = make_splits(c, d);
  const std::vector<std::size_t> rows = subset(s.idx.train, c.finetune_fraction, c.seed);
  const Dataset train = d.all.select(rows);
  const TrainSchedule sched = schedule_for(c, true);
  const auto t0 = Clock::now();
  const TrainResult r = fit(model, train, s.valid, sched, c.adam);
  ctx.timings["train_seconds"] = seconds_since(t0);
  finish_training(ctx, model, r, s.test, sched,
                  {{"command", "finetune"}, {"checkpoint", ckpt.string()}, {"finetune_rows", rows.size()}});
  return kOk;
}

int cmd_forecast(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  const auto ckpt = require_checkpoint(c);
  Model model = Model::load(ckpt);
  const ModelConfig& mc = model.config();
  if (mc.head != HeadKind::kNextToken) throw TaskError("forecast needs a next-token checkpoint, got a " + std::string(to_string(mc.head)) + " head");
  if (mc.input != InputKind::kContinuous) throw TaskError("forecast needs a continuous-input checkpoint");
  LoadedData d = load_data(c);
  if (d.events) throw TaskError("forecast needs continuous data");
  if (d.all.data.variates() != mc.variates) throw DimensionError("data variates do not match the checkpoint");
  const ForecastSection& f = c.forecast;
  if (f.series >= d.all.size()) throw InputError("forecast.series " + std::to_string(f.series) + " is out of range");
  if (f.horizon == 0) throw UsageError("horizon must be >= 1");
  const SequenceBatch series = d.all.data.select({f.series});
  const std::size_t total = series.steps();
  const std::size_t step = mc.uses_subsampler() ? 4 : 1;
  std::size_t prompt = f.prompt ? f.prompt : std::min<std::size_t>(total, 1024);
  prompt -= prompt % step;
  if (prompt == 0 || prompt > total) throw InputError("prompt length " + std::to_string(prompt) + " does not fit the series");
  const auto t0 = Clock::now();
  const NdArray pred = model.generate(series.prefix(prompt), f.horizon);
  ctx.timings["generate_seconds"] = seconds_since(t0);

  const std::size_t v = mc.variates;
  const std::size_t usable = total - total % step;
  const NdArray tokens = model.target_tokens(series.prefix(usable));  // [1 x usable/step x V]
  const std::size_t prompt_tokens = prompt / step;
  const std::size_t known = usable / step;
  std::ofstream os(ctx.out / "forecast.csv");
  os << "step";
  for (std::size_t j = 1; j <= v; ++j) os << ",pred_v" << j;
  for (std::size_t j = 1; j <= v; ++j) os << ",truth_v" << j;
  os << "\n";
  double abs_err = 0.0, persist_err = 0.0;
  std::size_t compared = 0;
  std::vector<double> p0, f0, t0v;
  for (std::size_t i = 0; i < prompt_tokens; ++i) p0.push_back(tokens[i * v]);
  for (std::size_t h = 0; h < f.horizon; ++h) {
    const bool has_truth = prompt_tokens + h < known;
    os << h;
    for (std::size_t j = 0; j < v; ++j) os << "," << fmt(pred[h * v + j]);
    for (std::size_t j = 0; j < v; ++j) {
      os << ",";
      if (has_truth) {
        const double t = tokens[(prompt_tokens + h) * v + j];
        os << fmt(t);
        abs_err += std::abs(pred[h * v + j] - t);
        persist_err += std::abs(tokens[(prompt_tokens - 1) * v + j] - t);
        ++compared;
      }
    }
    os << "\n";
    f0.push_back(pred[h * v]);
    if (has_truth) t0v.push_back(tokens[(prompt_tokens + h) * v]);
  }
  os.close();
  const std::size_t marker = f.train_tokens ? f.train_tokens : prompt_tokens;
  std::ofstream(ctx.out / "forecast.svg") << forecast_svg(p0, f0, t0v, marker);
  json summary = {{"command", "forecast"},  {"checkpoint", ckpt.string()}, {"series", f.series},
                  {"prompt_steps", prompt}, {"prompt_tokens", prompt_tokens}, {"horizon", f.horizon},
                  {"compared_values", compared}};
  if (compared) {
    summary["mae"] = abs_err / static_cast<double>(compared);
    summary["persistence_mae"] = persist_err / static_cast<double>(compared);
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i])) throw TrainingError("forecast produced a non-finite value at step " + std::to_string(i / v));
  }
  write_json(ctx.out / "summary.json", summary);
  std::printf("%s\n", summary.dump().c_str());
  return kOk;
}

int cmd_classify(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  LoadedData d = load_data(c);
  Splits s = make_splits(c, d);
  std::optional<Model> model;
  json summary = {{"command", "classify"}};
  TrainSchedule sched = schedule_for(c, false);
  if (c.checkpoint) {
    model.emplace(Model::load(require_checkpoint(c)));
    if (model->config().head != HeadKind::kClassification) {
      throw TaskError("classify needs a classification checkpoint, got a " + std::string(to_string(model->config().head)) + " head");
    }
    if (model->config().variates != d.all.data.variates() || (model->config().input == InputKind::kEvents) != d.events) {
      throw TaskError("checkpoint input does not match the data");
    }
    check_labels(d, model->config());
    summary["checkpoint"] = c.checkpoint->string();
  } else {
    const ModelConfig cfg = with_head(model_config_for(c, d), HeadKind::kClassification, class_count(c, d));
    check_labels(d, cfg);
    model.emplace(cfg);
    const auto t0 = Clock::now();
    const TrainResult r = fit(*model, s.train, s.valid, sched, c.adam);
    ctx.timings["train_seconds"] = seconds_since(t0);
    std::vector<TrainRecord> records = r.records;
    write_train_records(ctx.out / "metrics.csv", records);
    model->save(ctx.out / "model.tckp");
    summary["steps"] = r.steps;
    summary["best_epoch"] = r.best_epoch;
  }
  const NdArray probs = model->predict(s.test.data);
  std::vector<std::int64_t> labels(s.test.labels.begin(), s.test.labels.end());
  const std::size_t classes = probs.dim(1);
  std::ofstream os(ctx.out / "predictions.csv");
  os << "id,label,pred";
  for (std::size_t k = 0; k < classes; ++k) os << ",p" << k;
  os << "\n";
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (probs[r * classes + k] > probs[r * classes + best]) best = k;
    os << d.ids[s.idx.test[r]] << "," << labels[r] << "," << best;
    for (std::size_t k = 0; k < classes; ++k) os << "," << fmt(probs[r * classes + k]);
    os << "\n";
  }
  summary["test_rows"] = labels.size();
  summary["accuracy"] = accuracy(probs, labels);
  summary["auprc"] = metric(auprc(probs, labels));
  summary["majority_accuracy"] = majority_accuracy(labels);
  if (d.cohort_spec) summary["bayes_accuracy"] = bayes_accuracy(*d.cohort_spec, s.test.data, s.test.labels);
  write_json(ctx.out / "summary.json", summary);
  std::printf("%s\n", summary.dump().c_str());
  return kOk;
}

int cmd_bench(RunContext& ctx) {
  const BenchConfig& b = ctx.config.bench;
  BenchConfig cfg = b;
  cfg.seed = ctx.config.seed;
  const auto t0 = Clock::now();
  std::printf("%s\n", bench_csv_header().c_str());
  const auto results = run_bench(cfg, [](const BenchResult& r) {
    std::printf("%s,%zu,%zu,%zu,%zu,%zu,%.6g,,,,%s\n", std::string(to_string(r.mechanism)).c_str(), r.n, r.h, r.d, r.batch,
                r.repetitions, r.median_seconds, r.regime.c_str());
    std::fflush(stdout);
  });
  ctx.timings["bench_seconds"] = seconds_since(t0);
  write_bench_csv(ctx.out / "bench.csv", results);
  json slopes = json::object();
  for (const auto& r : results) slopes[std::string(to_string(r.mechanism))] = r.slope;
  write_json(ctx.out / "summary.json", {{"slopes", slopes}});
  std::printf("slopes %s\n", slopes.dump().c_str());
  return kOk;
}

int cmd_ablate(RunContext& ctx) {
  const RunConfig& c = ctx.config;
  LoadedData d = load_data(c);
  ModelConfig base = model_config_for(c, d);
  base.ablation = {};
  const bool classify = d.events;
  const std::size_t classes = class_count(c, d);
  base = with_head(base, classify ? HeadKind::kClassification : HeadKind::kNextToken, classes);
  if (classify) check_labels(d, base);
  Splits s = make_splits(c, d);
  const TrainSchedule sched = schedule_for(c, false);

  struct Variant {
    std::string name;
    AblationFlags flags;
  };
  const std::vector<Variant> variants = {{"full", {}},
                                         {"-subsampler", {true, false, false, false}},
                                         {"-temporal_conv", {false, true, false, false}},
                                         {"-decay", {false, false, true, false}},
                                         {"-decay-rotation", {false, false, true, true}}};
  const ParamList full_params = Model(base).parameters();
  auto removed_by = [&](const AblationFlags& f) {
    std::size_t n = 0;
    for (const auto& p : full_params) {
      const bool sub = p.name.rfind("subsampler.", 0) == 0;
      const bool conv = p.name.find(".temporal_conv.") != std::string::npos;
      if ((f.no_subsampler && sub) || (f.no_temporal_conv && conv)) n += p.var.value().size();
    }
    return n;
  };
  const std::size_t full_count = count_parameters(full_params);

  std::ofstream os(ctx.out / "ablation.csv");
  os << "variant,parameters,removed_parameters,parameter_audit,test_loss,accuracy,mae,auprc,note\n";
  std::optional<TrainRecord> full_record;
  for (const auto& v : variants) {
    ModelConfig cfg = base;
    cfg.ablation = v.flags;
    cfg.validate();
    std::string note;
    TrainRecord rec;
    std::size_t params = 0;
    if (v.flags.no_subsampler && !base.uses_subsampler()) {
      // Event inputs never pass through the tokenizer, so this row is the full model.
      note = "event inputs bypass the tokenizer; same model as full";
      rec = *full_record;
      params = full_count;
    } else {
      Model m(cfg);
      params = m.parameter_count();
      const auto t0 = Clock::now();
      const TrainResult r = fit(m, s.train, s.valid, sched, c.adam);
      ctx.timings[v.name + "_seconds"] = seconds_since(t0);
      rec = evaluate(m, s.test, sched.batch_size, r.steps, r.best_epoch, "test");
      if (!full_record) full_record = rec;
    }
    const std::size_t removed = note.empty() ? removed_by(v.flags) : 0;
    const bool audit = full_count - params == removed;
    os << v.name << "," << params << "," << removed << "," << (audit ? "ok" : "mismatch") << "," << fmt(rec.loss) << ","
       << fmt(rec.accuracy) << "," << fmt(rec.mae) << "," << fmt(rec.auprc) << "," << note << "\n";
    std::printf("%-16s params %zu loss %s accuracy %s mae %s\n", v.name.c_str(), params, fmt(rec.loss).c_str(),
                fmt(rec.accuracy).c_str(), fmt(rec.mae).c_str());
    if (!audit) throw ContractError("parameter audit failed for " + v.name);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_selftest(RunContext& ctx) {
  json results = json::object();
  bool all = true;
  auto report = [&](const std::string& name, bool ok, double value) {
    std::printf("selftest %-26s %s (%.3g)\n", name.c_str(), ok ? "PASS" : "FAIL", value);
    results[name] = {{"pass", ok}, {"value", value}};
    all = all && ok;
  };
  Rng rng(ctx.config.seed);

  {  // Three retention forms agree.
    double worst = 0.0;
    for (std::size_t l : {1u, 7u, 33u}) {
      for (bool irregular : {false, true}) {
        const NdArray q = rng.normal_array({l, 4}), k = rng.normal_array({l, 4}), v = rng.normal_array({l, 3});
        std::vector<std::int64_t> ts = regular_timestamps(l);
        if (irregular) {
          std::int64_t t = 1;
          for (auto& x : ts) x = (t += static_cast<std::int64_t>(rng.below(3)));
        }
        const DecayMask mask = DecayMask::irregular(ts, 0.9);
        const NdArray par = retention_parallel(q, k, v, mask);
        const NdArray rec = retention_recurrent(q, k, v, ts, 0.9).output;
        const NdArray chk = retention_chunkwise(q, k, v, ts, 0.9, 4).output;
        for (std::size_t i = 0; i < par.size(); ++i) {
          worst = std::max({worst, std::abs(par[i] - rec[i]), std::abs(par[i] - chk[i])});
        }
      }
    }
    report("retention_equivalence", worst < 1e-9, worst);
  }
  {  // <Q_n, K_m> depends only on n - m.
    const RotaryAngles ang = RotaryAngles::make(4);
    const NdArray a = rng.normal_array({1, 4}), b = rng.normal_array({1, 4});
    auto dot_at = [&](std::int64_t n, std::int64_t m) {
      const std::int64_t pn[] = {n}, pm[] = {m};
      const NdArray qa = rotate(a, pn, ang), kb = rotate(b, pm, ang);
      double s = 0.0;
      for (std::size_t i = 0; i < 4; ++i) s += qa[i] * kb[i];
      return s;
    };
    double worst = 0.0;
    for (std::int64_t n = 0; n < 8; ++n)
      for (std::int64_t m = 0; m <= n; ++m) worst = std::max(worst, std::abs(dot_at(n, m) - dot_at(n - m, 0)));
    report("rotation_shift_invariance", worst < 1e-10, worst);
  }
  ModelConfig tiny;
  tiny.variates = 2;
  tiny.layers = 2;
  tiny.heads = 2;
  tiny.head_dim = 8;
  tiny.value_dim = 8;
  tiny.chunk_size = 4;
  tiny.conv_kernel = 3;
  tiny.seed = ctx.config.seed;
  SequenceBatch batch;
  batch.values = rng.normal_array({2, 16, 2});
  {
    Model m(tiny);
    const GradCheckReport r = grad_check(m, {batch, {}}, 1e-4, 1e-5, 4);
    double worst = 0.0;
    for (const auto& b : r.blocks) worst = std::max(worst, b.max_rel_error);
    report("gradient_check_sampled", r.pass(), worst);
  }
  {  // Perturbing the last token leaves every earlier position unchanged.
    Model m(tiny);
    m.forward(batch, Mode::kTrain);
    const NdArray base = m.forward(batch, Mode::kEval).embeddings.value();
    SequenceBatch p = batch;
    for (std::size_t s = 12; s < 16; ++s) p.values[s * 2] += 1.0;
    const NdArray out = m.forward(p, Mode::kEval).embeddings.value();
    double leak = 0.0;
    for (std::size_t i = 0; i < 4 * tiny.d_model(); ++i) leak = std::max(leak, std::abs(out[i] - base[i]));
    report("causality", leak == 0.0, leak);
  }
  {  // Checkpoint round trip is bitwise.
    Model m(tiny);
    m.forward(batch, Mode::kTrain);
    const auto path = ctx.out / "selftest.tckp";
    m.save(path);
    Model back = Model::load(path);
    const bool same = back.forward(batch, Mode::kEval).embeddings.value() == m.forward(batch, Mode::kEval).embeddings.value();
    std::filesystem::remove(path);
    report("checkpoint_round_trip", same, same ? 0.0 : 1.0);
  }
  write_json(ctx.out / "summary.json", results);
  return all ? kOk : kNumeric;
}

// ---------------------------------------------------------------------------

std::string forecast_svg(const std::vector<double>& prompt, const std::vector<double>& forecast,
                         const std::vector<double>& truth, std::size_t train_tokens) {
  const double w = 900.0, h = 320.0, pad = 40.0;
  const std::size_t n = prompt.size() + forecast.size();
  double lo = INFINITY, hi = -INFINITY;
  for (const auto* s : {&prompt, &forecast, &truth})
    for (double v : *s)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) {
    lo = (std::isfinite(lo) ? lo : 0.0) - 1.0;
    hi = lo + 2.0;
  }
  const double span_x = static_cast<double>(std::max<std::size_t>(n, 2) - 1);
  auto x = [&](std::size_t i) { return pad + (w - 2 * pad) * static_cast<double>(i) / span_x; };
  auto y = [&](double v) { return h - pad - (h - 2 * pad) * (v - lo) / (hi - lo); };
  auto polyline = [&](const std::vector<double>& s, std::size_t offset, const char* color, const char* extra) {
    std::string pts;
    char buf[64];
    for (std::size_t i = 0; i < s.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x(offset + i), y(s[i]));
      pts += buf;
    }
    return "  <polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" " + extra + " points=\"" +
           pts + "\"/>\n";
  };
  char buf[512];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n"
                "  <rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                w, h, w, h);
  svg += buf;
  svg += polyline(prompt, 0, "#1f77b4", "");
  svg += polyline(truth, prompt.size(), "#7f7f7f", "stroke-dasharray=\"4 3\"");
  svg += polyline(forecast, prompt.size(), "#d62728", "");
  const double mx = x(std::min(train_tokens, n));
  std::snprintf(buf, sizeof(buf),
                "  <line x1=\"%.2f\" y1=\"%.0f\" x2=\"%.2f\" y2=\"%.0f\" stroke=\"black\" stroke-dasharray=\"2 4\"/>\n"
                "  <text x=\"%.2f\" y=\"%.0f\" font-size=\"11\">training length</text>\n",
                mx, pad / 2, mx, h - pad / 2, mx + 4, pad / 2 + 10);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "  <text x=\"%.0f\" y=\"16\" font-size=\"12\" fill=\"#1f77b4\">prompt</text>\n"
                "  <text x=\"%.0f\" y=\"16\" font-size=\"12\" fill=\"#d62728\">forecast</text>\n"
                "  <text x=\"%.0f\" y=\"16\" font-size=\"12\" fill=\"#7f7f7f\">ground truth</text>\n"
                "  <text x=\"%.0f\" y=\"%.0f\" font-size=\"11\">token</text>\n</svg>\n",
                pad, pad + 70, pad + 150, w / 2, h - 8);
  svg += buf;
  return svg;
}

}  // namespace timely::cli
