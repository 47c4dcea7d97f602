#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timely/model.hpp"

namespace timely {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 100;  // linear ramp from lr/warmup to lr
  double clip_norm = 1.0;          // global gradient norm; <= 0 disables clipping
};

struct OptimState {
  AdamConfig config;
  std::vector<NdArray> m;
  std::vector<NdArray> v;
  std::uint64_t step = 0;

  static OptimState make(const ParamList& params, AdamConfig config = {});
};

double scheduled_lr(const AdamConfig& config, std::uint64_t step);

// Scales grads in place so their global L2 norm is at most max_norm. Returns the norm before clipping.
double clip_global_norm(std::vector<NdArray>& grads, double max_norm);

// One Adam update. Throws TrainingError naming the first parameter with a non-finite gradient;
// parameters are untouched in that case.
void adam_step(const ParamList& params, std::vector<NdArray> grads, OptimState& state);

struct TrainSchedule {
  std::size_t epochs = 20;
  std::size_t patience = 3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;  // 0 = no cap

  static TrainSchedule pretrain_default() { return {}; }
  static TrainSchedule finetune_default() {
    TrainSchedule s;
    s.epochs = 5;
    return s;
  }
  void validate() const;
};

// A split: sequences plus task labels (empty for next-token pre-training).
struct Dataset {
  SequenceBatch data;
  std::vector<double> labels;

  std::size_t size() const { return data.batch(); }
  Dataset select(const std::vector<std::size_t>& rows) const;
};

// One row of the metrics CSV. Metrics that do not apply to the head are NaN and written empty.
struct TrainRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double mae = 0.0;
  double auprc = 0.0;
};

std::string train_record_header();
std::string format_train_record(const TrainRecord& r);
void write_train_records(const std::filesystem::path& path, const std::vector<TrainRecord>& records);

// Loss and head-specific metrics over a split in eval mode:
//   next-token: teacher-forced token MAE; classification: accuracy and AUPRC; regression: MAE.
TrainRecord evaluate(Model& model, const Dataset& split, std::size_t batch_size, std::size_t step = 0,
                     std::size_t epoch = 0, const std::string& name = "valid");

struct TrainResult {
  std::vector<TrainRecord> records;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_valid_loss = 0.0;
  double final_valid_loss = 0.0;  // validation loss of the last trained epoch
  bool stopped_early = false;
};

// Mini-batch training with the objective implied by the model's head. After every epoch the
// validation loss decides early stopping; the best weights are restored before returning.
TrainResult fit(Model& model, const Dataset& train, const Dataset& valid, const TrainSchedule& schedule,
                const AdamConfig& adam = {});

// Two-point: (f(x+h) - f(x-h)) / 2h, O(h^2) truncation.
// Five-point: (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, O(h^4) truncation. Entries with small
// gradients and large curvature (e.g. the input projection bias feeding several norms) can exceed a
// 1e-4 relative error under the two-point rule even when backward() is exact.
enum class FdStencil { kTwoPoint, kFivePoint };

struct GradCheckBlock {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  double h = 1e-5;
  FdStencil stencil = FdStencil::kFivePoint;
  std::vector<GradCheckBlock> blocks;
  bool pass() const;
  nlohmann::json to_json() const;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient is ~0 from
// turning round-off into a large ratio.
double gradient_rel_error(double analytic, double numeric, double floor = 1e-6);

// Central finite differences with step h against backward() for every entry of every block
// (or an evenly spaced subset of at most `max_entries_per_block` entries when nonzero).
GradCheckReport grad_check(const ParamList& params, const std::function<Var()>& loss_fn, double tolerance = 1e-4,
                           double h = 1e-5, std::size_t max_entries_per_block = 0,
                           FdStencil stencil = FdStencil::kFivePoint);
// Next-token or task loss of `model` on `batch` in training mode.
GradCheckReport grad_check(Model& model, const Dataset& batch, double tolerance = 1e-4, double h = 1e-5,
                           std::size_t max_entries_per_block = 0, FdStencil stencil = FdStencil::kFivePoint);

}  // namespace timely
