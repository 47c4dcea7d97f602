#include "timely/cli/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "timely/errors.hpp"
#include "timely/retention.hpp"
#include "timely/rng.hpp"

namespace timely::cli {

std::string_view FlopModel::regime(std::uint64_t n, std::uint64_t h, std::uint64_t d) {
  if (n < 2 * h * d) return "linear";
  if (n > 6 * h * d) return "quadratic";
  return "mixed";
}

std::string_view to_string(Mechanism m) {
  switch (m) {
    case Mechanism::kParallel: return "parallel";
    case Mechanism::kRecurrent: return "recurrent";
    case Mechanism::kChunkwise: return "chunkwise";
    case Mechanism::kFullAttention: return "full-attention-stub";
  }
  return "?";
}

Mechanism parse_mechanism(std::string_view name) {
  for (Mechanism m : {Mechanism::kParallel, Mechanism::kRecurrent, Mechanism::kChunkwise, Mechanism::kFullAttention}) {
    if (name == to_string(m)) return m;
  }
  throw UsageError("unknown mechanism '" + std::string(name) +
                   "' (expected parallel, recurrent, chunkwise or full-attention-stub)");
}

void BenchConfig::validate() const {
  const std::set<std::size_t> distinct(lengths.begin(), lengths.end());
  if (distinct.size() < 4) throw UsageError("bench needs at least 4 distinct lengths");
  if (*distinct.begin() == 0) throw UsageError("bench lengths must be positive");
  if (*distinct.rbegin() < 8 * *distinct.begin()) throw UsageError("bench lengths must span at least 8x");
  if (repetitions < 5) throw UsageError("bench needs at least 5 repetitions");
  if (mechanisms.empty()) throw UsageError("bench needs at least one mechanism");
  if (heads == 0 || head_dim == 0 || batch == 0 || chunk_size == 0) {
    throw UsageError("bench heads, head_dim, batch and chunk_size must be positive");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw UsageError("bench gamma must lie in (0, 1]");
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("slope fit needs two or more matching points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

// Causal softmax attention with an online softmax, so no n x n buffer is needed.
NdArray softmax_attention(const NdArray& q, const NdArray& k, const NdArray& v) {
  const std::size_t l = q.dim(0), dk = q.dim(1), dv = v.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  NdArray out(Shape{l, dv});
  std::vector<double> acc(dv);
  for (std::size_t n = 0; n < l; ++n) {
    const double* qn = q.raw() + n * dk;
    double mx = -std::numeric_limits<double>::infinity(), z = 0.0;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t m = 0; m <= n; ++m) {
      const double* km = k.raw() + m * dk;
      double s = 0.0;
      for (std::size_t a = 0; a < dk; ++a) s += qn[a] * km[a];
      s *= scale;
      if (s > mx) {
        const double f = std::exp(mx - s);
        z *= f;
        for (double& a : acc) a *= f;
        mx = s;
      }
      const double w = std::exp(s - mx);
      z += w;
      const double* vm = v.raw() + m * dv;
      for (std::size_t b = 0; b < dv; ++b) acc[b] += w * vm[b];
    }
    for (std::size_t b = 0; b < dv; ++b) out.raw()[n * dv + b] = acc[b] / z;
  }
  return out;
}

struct HeadInputs {
  NdArray q, k, v;
};

double checksum_sink = 0.0;

double time_once(Mechanism mech, const std::vector<HeadInputs>& heads, std::size_t batch,
                 const std::vector<std::int64_t>& ts, const BenchConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const DecayMask mask = DecayMask::regular(ts.size(), c.gamma);
  double sink = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (const auto& hd : heads) {
      NdArray out;
      switch (mech) {
        case Mechanism::kParallel: out = retention_parallel(hd.q, hd.k, hd.v, mask); break;
        case Mechanism::kRecurrent: out = retention_recurrent(hd.q, hd.k, hd.v, ts, c.gamma).output; break;
        case Mechanism::kChunkwise: out = retention_chunkwise(hd.q, hd.k, hd.v, ts, c.gamma, c.chunk_size).output; break;
        case Mechanism::kFullAttention: out = softmax_attention(hd.q, hd.k, hd.v); break;
      }
      sink += out.raw()[out.size() - 1];
    }
  }
  checksum_sink += sink;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchResult> run_bench(const BenchConfig& config, const std::function<void(const BenchResult&)>& progress) {
  config.validate();
  std::vector<std::size_t> lengths = config.lengths;
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  std::vector<BenchResult> out;
  const Rng root(config.seed);
  for (Mechanism mech : config.mechanisms) {
    const std::size_t first = out.size();
    for (std::size_t n : lengths) {
      // Rows of norm ~1 keep every form's outputs bounded at any n.
      Rng rng = root.fork(n);
      std::vector<HeadInputs> heads;
      const double s = 1.0 / std::sqrt(static_cast<double>(config.head_dim));
      for (std::size_t h = 0; h < config.heads; ++h) {
        HeadInputs hd;
        hd.q = rng.normal_array({n, config.head_dim}, s);
        hd.k = rng.normal_array({n, config.head_dim}, s);
        hd.v = rng.normal_array({n, config.head_dim});
        heads.push_back(std::move(hd));
      }
      const std::vector<std::int64_t> ts = regular_timestamps(n);
      time_once(mech, heads, config.batch, ts, config);  // warmup
      std::vector<double> times;
      for (std::size_t r = 0; r < config.repetitions; ++r) times.push_back(time_once(mech, heads, config.batch, ts, config));
      BenchResult res;
      res.mechanism = mech;
      res.n = n;
      res.h = config.heads;
      res.d = config.head_dim;
      res.batch = config.batch;
      res.repetitions = config.repetitions;
      res.median_seconds = median(times);
      res.flops_attention = FlopModel::attention(n, config.heads, config.head_dim);
      res.flops_ffn = FlopModel::ffn(n, config.heads, config.head_dim);
      res.regime = FlopModel::regime(n, config.heads, config.head_dim);
      res.slope = std::numeric_limits<double>::quiet_NaN();
      if (progress) progress(res);
      out.push_back(res);
    }
    std::vector<double> xs, ys;
    for (std::size_t i = first; i < out.size(); ++i) {
      xs.push_back(static_cast<double>(out[i].n));
      ys.push_back(out[i].median_seconds);
    }
    const double slope = loglog_slope(xs, ys);
    for (std::size_t i = first; i < out.size(); ++i) out[i].slope = slope;
  }
  return out;
}

std::string bench_csv_header() {
  return "mechanism,n,h,d,batch,repetitions,median_seconds,slope,flops_attention,flops_ffn,regime";
}

std::string format_bench_row(const BenchResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%zu,%zu,%.9g,%.6f,%llu,%llu,%s", std::string(to_string(r.mechanism)).c_str(),
                r.n, r.h, r.d, r.batch, r.repetitions, r.median_seconds, r.slope,
                static_cast<unsigned long long>(r.flops_attention), static_cast<unsigned long long>(r.flops_ffn),
                r.regime.c_str());
  return buf;
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchResult>& results) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << bench_csv_header() << "\n";
  for (const auto& r : results) os << format_bench_row(r) << "\n";
}

}  // namespace timely::cli
