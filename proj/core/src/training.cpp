#include "timely/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "timely/errors.hpp"
#include "timely/metrics.hpp"

namespace timely {

OptimState OptimState::make(const ParamList& params, AdamConfig config) {
  OptimState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.emplace_back(p.var.shape());
    s.v.emplace_back(p.var.shape());
  }
  return s;
}

double scheduled_lr(const AdamConfig& config, std::uint64_t step) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.lr;
  return config.lr * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
}

double clip_global_norm(std::vector<NdArray>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g.data()) x *= s;
  }
  return norm;
}

void adam_step(const ParamList& params, std::vector<NdArray> grads, OptimState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].var.shape()) throw DimensionError("gradient shape mismatch for " + params[i].name);
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + params[i].name);
    }
  }
  clip_global_norm(grads, state.config.clip_norm);
  const AdamConfig& c = state.config;
  const double lr = scheduled_lr(c, state.step);
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var p = params[i].var;
    double* w = p.mutable_value().raw();
    double* m = state.m[i].raw();
    double* v = state.v[i].raw();
    const double* g = grads[i].raw();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
  }
}

void TrainSchedule::validate() const {
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
}

Dataset Dataset::select(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.data = data.select(rows);
  if (!labels.empty())
    for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string train_record_header() { return "step,epoch,split,loss,accuracy,mae,auprc"; }

std::string format_train_record(const TrainRecord& r) {
  return std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + r.split + "," + fmt(r.loss) + "," +
         fmt(r.accuracy) + "," + fmt(r.mae) + "," + fmt(r.auprc);
}

void write_train_records(const std::filesystem::path& path, const std::vector<TrainRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << train_record_header() << '\n';
  for (const auto& r : records) os << format_train_record(r) << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation

TrainRecord evaluate(Model& model, const Dataset& split, std::size_t batch_size, std::size_t step, std::size_t epoch,
                     const std::string& name) {
  TrainRecord rec{step, epoch, name, 0.0, kNaN, kNaN, kNaN};
  const std::size_t n = split.size();
  if (n == 0) throw InputError("evaluating an empty split");
  const ModelConfig& cfg = model.config();
  double loss_sum = 0.0;
  double abs_sum = 0.0;
  std::size_t abs_count = 0;
  std::size_t hits = 0;
  std::size_t hit_count = 0;
  std::vector<double> probs;
  std::vector<std::int64_t> labels;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    std::vector<std::size_t> rows(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const Dataset part = split.select(rows);
    const double w = static_cast<double>(end - begin);
    if (cfg.head == HeadKind::kNextToken) {
      loss_sum += model.pretrain_loss(part.data, Mode::kEval).value().item() * w;
      ForwardResult fwd = model.forward(part.data, Mode::kEval);
      const NdArray pred = model.head_output(fwd).value();
      const NdArray target = cfg.input == InputKind::kContinuous ? model.target_tokens(part.data) : NdArray{};
      const std::size_t b = pred.shape()[0];
      const std::size_t p = pred.shape()[1];
      const std::size_t v = pred.shape()[2];
      const std::size_t l_tok = p - fwd.offset;
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t i = 0; i + 1 < fwd.valid[r]; ++i) {
          const std::size_t tgt = i + 1 - fwd.offset;
          const double* row = pred.raw() + (r * p + i) * v;
          if (cfg.input == InputKind::kContinuous) {
            for (std::size_t c = 0; c < v; ++c) abs_sum += std::abs(row[c] - target[(r * l_tok + tgt) * v + c]);
            abs_count += v;
          } else {
            const auto best = static_cast<std::int64_t>(std::max_element(row, row + v) - row);
            hits += best == part.data.codes[r].at(tgt);
            ++hit_count;
          }
        }
      }
    } else {
      loss_sum += model.task_loss(part.data, part.labels, Mode::kEval).value().item() * w;
      const NdArray out = model.predict(part.data);
      probs.insert(probs.end(), out.data().begin(), out.data().end());
      for (double l : part.labels) labels.push_back(static_cast<std::int64_t>(l));
      if (cfg.head == HeadKind::kRegression) {
        for (std::size_t i = 0; i < part.labels.size(); ++i) abs_sum += std::abs(out[i] - part.labels[i]);
        abs_count += part.labels.size();
      }
    }
  }
  rec.loss = loss_sum / static_cast<double>(n);
  if (abs_count) rec.mae = abs_sum / static_cast<double>(abs_count);
  if (hit_count) rec.accuracy = static_cast<double>(hits) / static_cast<double>(hit_count);
  if (cfg.head == HeadKind::kClassification) {
    const NdArray p(Shape{labels.size(), cfg.num_classes}, probs);
    rec.accuracy = accuracy(p, labels);
    rec.auprc = auprc(p, labels);
  }
  if (!std::isfinite(rec.loss)) throw TrainingError("non-finite " + name + " loss at step " + std::to_string(step));
  return rec;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

Var objective(Model& model, const Dataset& part) {
  if (model.config().head == HeadKind::kNextToken) return model.pretrain_loss(part.data, Mode::kTrain);
  return model.task_loss(part.data, part.labels, Mode::kTrain);
}

}  // namespace

TrainResult fit(Model& model, const Dataset& train, const Dataset& valid, const TrainSchedule& schedule,
                const AdamConfig& adam) {
  schedule.validate();
  if (train.size() == 0) throw InputError("empty training split");
  const ParamList params = model.parameters();
  OptimState opt = OptimState::make(params, adam);
  TrainResult result;
  // A fresh model with batch norm has no eval statistics yet, so epoch 0 is only logged
  // when they exist (e.g. after loading a pretrained backbone).
  result.best_valid_loss = std::numeric_limits<double>::infinity();
  if (model.has_running_statistics()) {
    const TrainRecord first = evaluate(model, valid, schedule.batch_size, 0, 0, "valid");
    result.records.push_back(first);
    result.best_valid_loss = first.loss;
    result.final_valid_loss = first.loss;
  }
  std::vector<NdArray> best_weights = model.snapshot();
  std::size_t since_best = 0;
  const Rng root(schedule.seed);
  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = root.fork(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    bool capped = false;
    for (std::size_t begin = 0; begin < order.size(); begin += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), begin + schedule.batch_size);
      const Dataset part = train.select({order.begin() + begin, order.begin() + end});
      for (const auto& p : params) p.var.node()->has_grad = false;
      Var loss = objective(model, part);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite training loss at step " + std::to_string(result.steps + 1));
      }
      backward(loss);
      std::vector<NdArray> grads;
      grads.reserve(params.size());
      for (const auto& p : params) grads.push_back(p.var.grad());
      adam_step(params, std::move(grads), opt);
      ++result.steps;
      result.records.push_back({result.steps, epoch, "train", value, kNaN, kNaN, kNaN});
      if (schedule.max_steps && result.steps >= schedule.max_steps) {
        capped = true;
        break;
      }
    }
    TrainRecord rec = evaluate(model, valid, schedule.batch_size, result.steps, epoch, "valid");
    result.records.push_back(rec);
    result.final_valid_loss = rec.loss;
    if (rec.loss < result.best_valid_loss) {
      result.best_valid_loss = rec.loss;
      result.best_epoch = epoch;
      best_weights = model.snapshot();
      since_best = 0;
    } else if (++since_best >= schedule.patience) {
      result.stopped_early = epoch < schedule.epochs;
      break;
    }
    if (capped) break;
  }
  model.restore(best_weights);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

bool GradCheckReport::pass() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const GradCheckBlock& b) { return b.pass; });
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json j;
  j["tolerance"] = tolerance;
  j["h"] = h;
  j["stencil"] = stencil == FdStencil::kTwoPoint ? "two-point" : "five-point";
  j["pass"] = pass();
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : blocks) {
    j["blocks"].push_back({{"name", b.name}, {"checked", b.checked}, {"max_rel_error", b.max_rel_error}, {"pass", b.pass}});
  }
  return j;
}

double gradient_rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ParamList& params, const std::function<Var()>& loss_fn, double tolerance, double h,
                           std::size_t max_entries_per_block, FdStencil stencil) {
  GradCheckReport report;
  report.tolerance = tolerance;
  report.h = h;
  report.stencil = stencil;
  for (const auto& p : params) p.var.node()->has_grad = false;
  backward(loss_fn());
  std::vector<NdArray> analytic;
  for (const auto& p : params) analytic.push_back(p.var.grad());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var var = params[i].var;
    NdArray& w = var.mutable_value();
    const std::size_t n = w.size();
    std::size_t stride = 1;
    if (max_entries_per_block && n > max_entries_per_block) stride = (n + max_entries_per_block - 1) / max_entries_per_block;
    GradCheckBlock block{params[i].name, 0, 0.0, true};
    for (std::size_t j = 0; j < n; j += stride) {
      const double orig = w[j];
      auto at = [&](double offset) {
        w[j] = orig + offset;
        return loss_fn().value().item();
      };
      double numeric = 0.0;
      if (stencil == FdStencil::kTwoPoint) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
      }
      w[j] = orig;
      const double err = gradient_rel_error(analytic[i][j], numeric);
      block.max_rel_error = std::max(block.max_rel_error, std::isnan(err) ? INFINITY : err);
      ++block.checked;
    }
    block.pass = block.max_rel_error < tolerance;
    report.blocks.push_back(block);
  }
  return report;
}

GradCheckReport grad_check(Model& model, const Dataset& batch, double tolerance, double h,
                           std::size_t max_entries_per_block, FdStencil stencil) {
  return grad_check(model.parameters(), [&] { return objective(model, batch); }, tolerance, h, max_entries_per_block,
                    stencil);
}

}  // namespace timely
