#include "timely/retention.hpp"

#include <algorithm>
#include <cmath>

#include "timely/errors.hpp"

namespace timely {

namespace {

constexpr std::int64_t kMaxTabulatedGap = 1 << 20;

// gamma^dt lookup. Tabulated values are std::pow results, so every form sees identical factors.
class Powers {
 public:
  Powers(double gamma, std::int64_t max_gap) : gamma_(gamma) {
    if (max_gap >= 0 && max_gap <= kMaxTabulatedGap) {
      table_.resize(static_cast<std::size_t>(max_gap) + 1);
      for (std::size_t i = 0; i < table_.size(); ++i) table_[i] = std::pow(gamma, static_cast<double>(i));
    }
  }
  double operator()(std::int64_t dt) const {
    if (dt >= 0 && static_cast<std::size_t>(dt) < table_.size()) return table_[static_cast<std::size_t>(dt)];
    return std::pow(gamma_, static_cast<double>(dt));
  }
  std::vector<double> take() && { return std::move(table_); }

 private:
  double gamma_;
  std::vector<double> table_;
};

std::int64_t span_of(std::span<const std::int64_t> ts, std::optional<std::int64_t> prev = std::nullopt) {
  if (ts.empty()) return 0;
  const std::int64_t lo = prev ? std::min(*prev, ts.front()) : ts.front();
  return ts.back() - lo;
}

struct HeadDims {
  std::size_t l, dk, dv;
};

HeadDims check_qkv(const NdArray& q, const NdArray& k, const NdArray& v, std::size_t n_ts) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("retention expects rank-2 per-head Q, K, V; got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t l = q.shape()[0];
  if (k.shape()[0] != l || v.shape()[0] != l) {
    throw DimensionError("Q, K, V lengths differ: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()));
  }
  if (q.shape()[1] != k.shape()[1]) {
    throw DimensionError("Q and K inner dims differ: " + shape_str(q.shape()) + " vs " + shape_str(k.shape()));
  }
  if (n_ts != l) {
    throw InputError("got " + std::to_string(n_ts) + " timestamps for a sequence of length " + std::to_string(l));
  }
  return {l, q.shape()[1], v.shape()[1]};
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("decay gamma must lie in [0, 1]");
}

// out_row += Q_row * S  (S: dk x dv)
void add_q_times_state(const double* qrow, const double* s, std::size_t dk, std::size_t dv, double scale,
                       double* out_row) {
  for (std::size_t a = 0; a < dk; ++a) {
    const double w = scale * qrow[a];
    if (w == 0.0) continue;
    const double* srow = s + a * dv;
    for (std::size_t b = 0; b < dv; ++b) out_row[b] += w * srow[b];
  }
}

// S += scale * K_row^T V_row
void add_outer(const double* krow, const double* vrow, std::size_t dk, std::size_t dv, double scale, double* s) {
  for (std::size_t a = 0; a < dk; ++a) {
    const double w = scale * krow[a];
    if (w == 0.0) continue;
    double* srow = s + a * dv;
    for (std::size_t b = 0; b < dv; ++b) srow[b] += w * vrow[b];
  }
}

}  // namespace

RetentionForm parse_retention_form(std::string_view name) {
  if (name == "parallel") return RetentionForm::kParallel;
  if (name == "recurrent") return RetentionForm::kRecurrent;
  if (name == "chunkwise") return RetentionForm::kChunkwise;
  throw ConfigError("unknown retention form '" + std::string(name) + "'");
}

std::string_view to_string(RetentionForm form) {
  switch (form) {
    case RetentionForm::kParallel: return "parallel";
    case RetentionForm::kRecurrent: return "recurrent";
    case RetentionForm::kChunkwise: return "chunkwise";
  }
  return "parallel";
}

void check_timestamps(std::span<const std::int64_t> timestamps) {
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] < timestamps[i - 1]) {
      throw InputError("timestamps decrease at index " + std::to_string(i) + " (" +
                       std::to_string(timestamps[i - 1]) + " -> " + std::to_string(timestamps[i]) + ")");
    }
  }
}

std::vector<std::int64_t> regular_timestamps(std::size_t length, std::int64_t start) {
  std::vector<std::int64_t> ts(length);
  for (std::size_t i = 0; i < length; ++i) ts[i] = start + static_cast<std::int64_t>(i);
  return ts;
}

DecayMask::DecayMask(std::vector<std::int64_t> timestamps, double gamma)
    : timestamps_(std::move(timestamps)), gamma_(gamma) {
  check_gamma(gamma_);
  check_timestamps(timestamps_);
  powers_ = Powers(gamma_, span_of(timestamps_)).take();
}

DecayMask DecayMask::regular(std::size_t length, double gamma) {
  return DecayMask(regular_timestamps(length, 0), gamma);
}

DecayMask DecayMask::irregular(std::vector<std::int64_t> timestamps, double gamma) {
  return DecayMask(std::move(timestamps), gamma);
}

double DecayMask::factor(std::int64_t dt) const {
  if (dt >= 0 && static_cast<std::size_t>(dt) < powers_.size()) return powers_[static_cast<std::size_t>(dt)];
  return std::pow(gamma_, static_cast<double>(dt));
}

NdArray DecayMask::materialize() const {
  const std::size_t l = length();
  NdArray d(Shape{std::max<std::size_t>(l, 1), std::max<std::size_t>(l, 1)});
  for (std::size_t n = 0; n < l; ++n)
    for (std::size_t m = 0; m <= n; ++m) d[n * l + m] = (*this)(n, m);
  return d;
}

ChunkPlan ChunkPlan::make(std::size_t length, std::size_t chunk_size) {
  if (chunk_size == 0) throw ConfigError("chunk size must be >= 1");
  ChunkPlan p;
  p.chunk_size = chunk_size;
  for (std::size_t b = 0; b < length; b += chunk_size) p.boundaries.push_back(b);
  p.boundaries.push_back(length);
  return p;
}

std::vector<double> chunk_zeta(const ChunkPlan& plan, std::size_t chunk, std::span<const std::int64_t> timestamps,
                               double gamma, std::int64_t t_prev) {
  if (chunk >= plan.chunks()) throw InputError("chunk index out of range");
  const std::size_t b0 = plan.boundaries[chunk];
  const std::size_t b1 = plan.boundaries[chunk + 1];
  std::vector<double> zeta;
  zeta.reserve(b1 - b0);
  for (std::size_t n = b0; n < b1; ++n) zeta.push_back(std::pow(gamma, static_cast<double>(timestamps[n] - t_prev)));
  return zeta;
}

NdArray retention_parallel(const NdArray& q, const NdArray& k, const NdArray& v, const DecayMask& mask) {
  const auto [l, dk, dv] = check_qkv(q, k, v, mask.length());
  NdArray out(Shape{l, dv});
  for (std::size_t n = 0; n < l; ++n) {
    const double* qn = q.raw() + n * dk;
    double* on = out.raw() + n * dv;
    for (std::size_t m = 0; m <= n; ++m) {
      const double d = mask(n, m);
      if (d == 0.0) continue;
      const double* km = k.raw() + m * dk;
      double s = 0.0;
      for (std::size_t a = 0; a < dk; ++a) s += qn[a] * km[a];
      const double w = s * d;
      const double* vm = v.raw() + m * dv;
      for (std::size_t b = 0; b < dv; ++b) on[b] += w * vm[b];
    }
  }
  return out;
}

RetentionResult retention_recurrent(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma,
                                    const RetentionState& initial) {
  check_gamma(gamma);
  const auto [l, dk, dv] = check_qkv(q, k, v, timestamps.size());
  check_timestamps(timestamps);
  if (initial.s.shape() != Shape{dk, dv}) {
    throw DimensionError("initial state " + shape_str(initial.s.shape()) + " does not match d_k x d_v");
  }
  if (initial.last_timestamp && l > 0 && timestamps.front() < *initial.last_timestamp) {
    throw InputError("first timestamp precedes the carried state's timestamp");
  }
  const Powers pw(gamma, span_of(timestamps, initial.last_timestamp));
  RetentionResult r{NdArray(Shape{std::max<std::size_t>(l, 1), dv}), initial};
  double* s = r.state.s.raw();
  for (std::size_t n = 0; n < l; ++n) {
    if (r.state.last_timestamp) {
      const double f = pw(timestamps[n] - *r.state.last_timestamp);
      if (f != 1.0)
        for (std::size_t i = 0; i < dk * dv; ++i) s[i] *= f;
    }
    add_outer(k.raw() + n * dk, v.raw() + n * dv, dk, dv, 1.0, s);
    r.state.last_timestamp = timestamps[n];
    add_q_times_state(q.raw() + n * dk, s, dk, dv, 1.0, r.output.raw() + n * dv);
  }
  return r;
}

RetentionResult retention_recurrent(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma) {
  return retention_recurrent(q, k, v, timestamps, gamma, RetentionState::zeros(q.dim(1), v.dim(1)));
}

RetentionResult retention_chunkwise(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma, const ChunkPlan& plan,
                                    const RetentionState& initial) {
  check_gamma(gamma);
  if (plan.chunk_size == 0) throw ConfigError("chunk size must be >= 1");
  const auto [l, dk, dv] = check_qkv(q, k, v, timestamps.size());
  check_timestamps(timestamps);
  if (plan.boundaries.empty() || plan.boundaries.back() != l) throw InputError("chunk plan does not cover sequence");
  if (initial.s.shape() != Shape{dk, dv}) {
    throw DimensionError("initial state " + shape_str(initial.s.shape()) + " does not match d_k x d_v");
  }
  if (initial.last_timestamp && l > 0 && timestamps.front() < *initial.last_timestamp) {
    throw InputError("first timestamp precedes the carried state's timestamp");
  }
  const Powers pw(gamma, span_of(timestamps, initial.last_timestamp));
  RetentionResult r{NdArray(Shape{std::max<std::size_t>(l, 1), dv}), initial};
  NdArray next_state(Shape{dk, dv});
  std::vector<double> scores;
  for (std::size_t c = 0; c < plan.chunks(); ++c) {
    const std::size_t b0 = plan.boundaries[c];
    const std::size_t b1 = plan.boundaries[c + 1];
    const std::optional<std::int64_t> t_prev = r.state.last_timestamp;
    const double* s_prev = r.state.s.raw();
    // Intra-chunk: (Q K^T (.) D) V restricted to the chunk.
    for (std::size_t n = b0; n < b1; ++n) {
      const double* qn = q.raw() + n * dk;
      double* on = r.output.raw() + n * dv;
      for (std::size_t m = b0; m <= n; ++m) {
        const double* km = k.raw() + m * dk;
        double s = 0.0;
        for (std::size_t a = 0; a < dk; ++a) s += qn[a] * km[a];
        const double w = s * pw(timestamps[n] - timestamps[m]);
        if (w == 0.0) continue;
        const double* vm = v.raw() + m * dv;
        for (std::size_t b = 0; b < dv; ++b) on[b] += w * vm[b];
      }
      // Inter-chunk: (Q S_prev) scaled by zeta_n = gamma^(t_n - t_prev).
      if (t_prev) add_q_times_state(qn, s_prev, dk, dv, pw(timestamps[n] - *t_prev), on);
    }
    // State: K^T V weighted by the chunk's last decay row, plus the decayed carried state.
    const std::int64_t t_last = timestamps[b1 - 1];
    next_state.fill(0.0);
    double* ns = next_state.raw();
    for (std::size_t m = b0; m < b1; ++m) {
      add_outer(k.raw() + m * dk, v.raw() + m * dv, dk, dv, pw(t_last - timestamps[m]), ns);
    }
    if (t_prev) {
      const double f = pw(t_last - *t_prev);
      for (std::size_t i = 0; i < dk * dv; ++i) ns[i] += f * s_prev[i];
    }
    std::swap(r.state.s, next_state);
    r.state.last_timestamp = t_last;
  }
  return r;
}

RetentionResult retention_chunkwise(const NdArray& q, const NdArray& k, const NdArray& v,
                                    std::span<const std::int64_t> timestamps, double gamma, std::size_t chunk_size) {
  return retention_chunkwise(q, k, v, timestamps, gamma, ChunkPlan::make(timestamps.size(), chunk_size),
                             RetentionState::zeros(q.dim(1), v.dim(1)));
}

namespace {

NdArray extract_head(const NdArray& x, std::size_t b, std::size_t h, std::size_t l, std::size_t width,
                     std::size_t d) {
  NdArray out(Shape{l, d});
  for (std::size_t n = 0; n < l; ++n) {
    const double* src = x.raw() + (b * l + n) * width + h * d;
    std::copy(src, src + d, out.raw() + n * d);
  }
  return out;
}

void scatter_head(NdArray& x, const NdArray& head, std::size_t b, std::size_t h, std::size_t l, std::size_t width,
                  std::size_t d) {
  for (std::size_t n = 0; n < l; ++n) {
    const double* src = head.raw() + n * d;
    double* dst = x.raw() + (b * l + n) * width + h * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
}

struct HeadGrads {
  NdArray dq, dk, dv;
};

HeadGrads backward_quadratic(const NdArray& q, const NdArray& k, const NdArray& v, const NdArray& dout,
                             const DecayMask& mask) {
  const std::size_t l = q.dim(0);
  const std::size_t dk = q.dim(1);
  const std::size_t dv = v.dim(1);
  HeadGrads g{NdArray(q.shape()), NdArray(k.shape()), NdArray(v.shape())};
  for (std::size_t n = 0; n < l; ++n) {
    const double* qn = q.raw() + n * dk;
    const double* gon = dout.raw() + n * dv;
    for (std::size_t m = 0; m <= n; ++m) {
      const double d = mask(n, m);
      if (d == 0.0) continue;
      const double* km = k.raw() + m * dk;
      const double* vm = v.raw() + m * dv;
      double s = 0.0;
      for (std::size_t a = 0; a < dk; ++a) s += qn[a] * km[a];
      double c = 0.0;
      for (std::size_t b = 0; b < dv; ++b) c += gon[b] * vm[b];
      const double a_nm = d * s;
      c *= d;
      double* gvm = g.dv.raw() + m * dv;
      for (std::size_t b = 0; b < dv; ++b) gvm[b] += a_nm * gon[b];
      double* gqn = g.dq.raw() + n * dk;
      double* gkm = g.dk.raw() + m * dk;
      for (std::size_t a = 0; a < dk; ++a) {
        gqn[a] += c * km[a];
        gkm[a] += c * qn[a];
      }
    }
  }
  return g;
}

// Linear-time adjoint: forward states S_n give dQ_n = S_n dO_n; reverse states
// G_m = sum_{n>=m} D[n][m] Q_n^T dO_n give dV_m = K_m G_m and dK_m = G_m V_m^T.
HeadGrads backward_linear(const NdArray& q, const NdArray& k, const NdArray& v, const NdArray& dout,
                          std::span<const std::int64_t> ts, double gamma) {
  const std::size_t l = q.dim(0);
  const std::size_t dk = q.dim(1);
  const std::size_t dv = v.dim(1);
  const Powers pw(gamma, span_of(ts));
  HeadGrads g{NdArray(q.shape()), NdArray(k.shape()), NdArray(v.shape())};
  std::vector<double> s(dk * dv, 0.0);
  for (std::size_t n = 0; n < l; ++n) {
    if (n > 0) {
      const double f = pw(ts[n] - ts[n - 1]);
      for (double& x : s) x *= f;
    }
    add_outer(k.raw() + n * dk, v.raw() + n * dv, dk, dv, 1.0, s.data());
    const double* gon = dout.raw() + n * dv;
    double* gqn = g.dq.raw() + n * dk;
    for (std::size_t a = 0; a < dk; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < dv; ++b) acc += s[a * dv + b] * gon[b];
      gqn[a] = acc;
    }
  }
  std::fill(s.begin(), s.end(), 0.0);
  for (std::size_t m = l; m-- > 0;) {
    if (m + 1 < l) {
      const double f = pw(ts[m + 1] - ts[m]);
      for (double& x : s) x *= f;
    }
    add_outer(q.raw() + m * dk, dout.raw() + m * dv, dk, dv, 1.0, s.data());
    const double* km = k.raw() + m * dk;
    const double* vm = v.raw() + m * dv;
    double* gvm = g.dv.raw() + m * dv;
    double* gkm = g.dk.raw() + m * dk;
    for (std::size_t a = 0; a < dk; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < dv; ++b) {
        gvm[b] += km[a] * s[a * dv + b];
        acc += s[a * dv + b] * vm[b];
      }
      gkm[a] = acc;
    }
  }
  return g;
}

}  // namespace

Var retention(const Var& q, const Var& k, const Var& v, const std::vector<std::vector<std::int64_t>>& timestamps,
              const DecaySchedule& schedule, RetentionForm form, std::size_t chunk_size) {
  schedule.validate();
  if (form == RetentionForm::kChunkwise && chunk_size == 0) throw ConfigError("chunk size must be >= 1");
  const Shape& sq = q.shape();
  const Shape& sv = v.shape();
  if (sq.size() != 3 || k.shape() != sq || sv.size() != 3 || sv[0] != sq[0] || sv[1] != sq[1]) {
    throw DimensionError("retention expects Q, K [B x L x H*d_k] and V [B x L x H*d_v]; got " + shape_str(sq) +
                         ", " + shape_str(k.shape()) + ", " + shape_str(sv));
  }
  const std::size_t heads = schedule.heads();
  const std::size_t batch = sq[0];
  const std::size_t l = sq[1];
  if (sq[2] % heads != 0 || sv[2] % heads != 0) {
    throw ConfigError("feature widths " + std::to_string(sq[2]) + "/" + std::to_string(sv[2]) +
                      " are not divisible by " + std::to_string(heads) + " heads");
  }
  if (timestamps.size() != batch) throw InputError("need one timestamp vector per batch row");
  for (const auto& ts : timestamps) {
    if (ts.size() != l) throw InputError("timestamp vector length does not match sequence length");
    check_timestamps(ts);
  }
  const std::size_t dk = sq[2] / heads;
  const std::size_t dv = sv[2] / heads;
  NdArray out(Shape{batch, l, sv[2]});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const NdArray qh = extract_head(q.value(), b, h, l, sq[2], dk);
      const NdArray kh = extract_head(k.value(), b, h, l, sq[2], dk);
      const NdArray vh = extract_head(v.value(), b, h, l, sv[2], dv);
      const double gamma = schedule.gammas[h];
      NdArray oh;
      switch (form) {
        case RetentionForm::kParallel:
          oh = retention_parallel(qh, kh, vh, DecayMask::irregular(timestamps[b], gamma));
          break;
        case RetentionForm::kRecurrent:
          oh = retention_recurrent(qh, kh, vh, timestamps[b], gamma).output;
          break;
        case RetentionForm::kChunkwise:
          oh = retention_chunkwise(qh, kh, vh, timestamps[b], gamma, chunk_size).output;
          break;
      }
      scatter_head(out, oh, b, h, l, sv[2], dv);
    }
  }
  return make_op(std::move(out), {q, k, v}, [q, k, v, timestamps, schedule, form, batch, l, heads, dk, dv](const NdArray& g) {
    const std::size_t wq = heads * dk;
    const std::size_t wv = heads * dv;
    NdArray gq(q.shape());
    NdArray gk(k.shape());
    NdArray gv(v.shape());
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const NdArray qh = extract_head(q.value(), b, h, l, wq, dk);
        const NdArray kh = extract_head(k.value(), b, h, l, wq, dk);
        const NdArray vh = extract_head(v.value(), b, h, l, wv, dv);
        const NdArray goh = extract_head(g, b, h, l, wv, dv);
        const double gamma = schedule.gammas[h];
        const HeadGrads hg = form == RetentionForm::kParallel
                                 ? backward_quadratic(qh, kh, vh, goh, DecayMask::irregular(timestamps[b], gamma))
                                 : backward_linear(qh, kh, vh, goh, timestamps[b], gamma);
        scatter_head(gq, hg.dq, b, h, l, wq, dk);
        scatter_head(gk, hg.dk, b, h, l, wq, dk);
        scatter_head(gv, hg.dv, b, h, l, wv, dv);
      }
    }
    accumulate_grad(q, gq);
    accumulate_grad(k, gk);
    accumulate_grad(v, gv);
  });
}

}  // namespace timely
