#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "timely/autograd.hpp"
#include "timely/positional.hpp"

namespace timely {

enum class RetentionForm { kParallel, kRecurrent, kChunkwise };

RetentionForm parse_retention_form(std::string_view name);
std::string_view to_string(RetentionForm form);

// Causal decay weights D[n][m] = gamma^(t_n - t_m) for m <= n, else 0.
// Regular sequences use t_n = n. Entries are evaluated on demand so that long
// sequences never need the L x L matrix; materialize() builds it explicitly.
class DecayMask {
 public:
  static DecayMask regular(std::size_t length, double gamma);
  static DecayMask irregular(std::vector<std::int64_t> timestamps, double gamma);

  std::size_t length() const noexcept { return timestamps_.size(); }
  double gamma() const noexcept { return gamma_; }
  const std::vector<std::int64_t>& timestamps() const noexcept { return timestamps_; }

  double operator()(std::size_t n, std::size_t m) const {
    return m > n ? 0.0 : factor(timestamps_[n] - timestamps_[m]);
  }
  // gamma^dt with the 0^0 = 1 convention.
  double factor(std::int64_t dt) const;
  NdArray materialize() const;

 private:
  DecayMask(std::vector<std::int64_t> timestamps, double gamma);

  std::vector<std::int64_t> timestamps_;
  double gamma_;
  std::vector<double> powers_;  // gamma^k for k = 0..max gap when that range is small
};

// Running d_k x d_v summary carried across steps and chunks.
struct RetentionState {
  NdArray s;
  std::optional<std::int64_t> last_timestamp;

  static RetentionState zeros(std::size_t dk, std::size_t dv) { return {NdArray(Shape{dk, dv}), std::nullopt}; }
};

// Chunk boundaries over a sequence of length L; the last chunk may be ragged.
struct ChunkPlan {
  std::size_t chunk_size = 64;
  std::vector<std::size_t> boundaries;  // size = chunks + 1, boundaries.front() == 0

  static ChunkPlan make(std::size_t length, std::size_t chunk_size);
  std::size_t chunks() const noexcept { return boundaries.empty() ? 0 : boundaries.size() - 1; }
};

// Inter-chunk scaling for the rows of chunk i: gamma^(t_row - t_prev), where t_prev is the
// timestamp the carried state refers to. For regular timestamps this is gamma^j, j = 1..B.
std::vector<double> chunk_zeta(const ChunkPlan& plan, std::size_t chunk, std::span<const std::int64_t> timestamps,
                               double gamma, std::int64_t t_prev);

// (Q K^T (.) D) V for one head; Q, K: [L x d_k], V: [L x d_v].
NdArray retention_parallel(const NdArray& q, const NdArray& k, const NdArray& v, const DecayMask& mask);

struct RetentionResult {
  NdArray output;
  RetentionState state;
};

// S_n = gamma^(t_n - t_{n-1}) S_{n-1} + K_n^T V_n, out_n = Q_n S_n. Continues from `initial`.
RetentionResult retention_recurrent(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma,
                                    const RetentionState& initial);
RetentionResult retention_recurrent(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma);

// Parallel within each chunk, recurrent across chunks. All cross-chunk decays are taken
// in timestamp space, which makes the result identical to the recurrent form.
RetentionResult retention_chunkwise(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma, const ChunkPlan& plan,
                                    const RetentionState& initial);
RetentionResult retention_chunkwise(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma, std::size_t chunk_size);

std::vector<std::int64_t> regular_timestamps(std::size_t length, std::int64_t start = 1);
void check_timestamps(std::span<const std::int64_t> timestamps);

// Differentiable multi-head retention over a batch.
//   q, k: [B x L x H*d_k], v: [B x L x H*d_v]; timestamps: one vector of length L per batch row.
// Parallel form backpropagates through the quadratic formula; recurrent and chunk-wise
// forms use the linear-time reverse recurrence.
Var retention(const Var& q, const Var& k, const Var& v, const std::vector<std::vector<std::int64_t>>& timestamps,
              const DecaySchedule& schedule, RetentionForm form, std::size_t chunk_size);

}  // namespace timely
