#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace timely::cli {

// Per-layer FLOP model of a decoder block with h heads of width d over n tokens.
//   attention = 4 n h^2 d^2 (projections) + 2 n^2 h d (scores and mixing)
//   ffn       = 8 n h^2 d^2
struct FlopModel {
  static std::uint64_t attention_linear(std::uint64_t n, std::uint64_t h, std::uint64_t d) { return 4 * n * h * h * d * d; }
  static std::uint64_t attention_quadratic(std::uint64_t n, std::uint64_t h, std::uint64_t d) { return 2 * n * n * h * d; }
  static std::uint64_t attention(std::uint64_t n, std::uint64_t h, std::uint64_t d) {
    return attention_linear(n, h, d) + attention_quadratic(n, h, d);
  }
  static std::uint64_t ffn(std::uint64_t n, std::uint64_t h, std::uint64_t d) { return 8 * n * h * h * d * d; }
  // Every term that grows linearly in n.
  static std::uint64_t linear_total(std::uint64_t n, std::uint64_t h, std::uint64_t d) {
    return attention_linear(n, h, d) + ffn(n, h, d);
  }
  // "linear" below n = 2hd, "quadratic" above n = 6hd, "mixed" in between (boundaries inclusive to mixed).
  static std::string_view regime(std::uint64_t n, std::uint64_t h, std::uint64_t d);
};

enum class Mechanism { kParallel, kRecurrent, kChunkwise, kFullAttention };

std::string_view to_string(Mechanism m);
Mechanism parse_mechanism(std::string_view name);

struct BenchConfig {
  std::vector<std::size_t> lengths = {512, 1024, 2048, 4096, 8192};
  std::vector<Mechanism> mechanisms = {Mechanism::kParallel, Mechanism::kRecurrent, Mechanism::kChunkwise};
  std::size_t heads = 2;
  std::size_t head_dim = 4;
  std::size_t batch = 64;
  std::size_t repetitions = 5;
  std::size_t chunk_size = 64;
  double gamma = 0.96875;
  std::uint64_t seed = 0;

  // Throws UsageError: fewer than 4 distinct lengths, span under 8x, or fewer than 5 repetitions.
  void validate() const;
};

struct BenchResult {
  Mechanism mechanism = Mechanism::kParallel;
  std::size_t n = 0, h = 0, d = 0, batch = 0, repetitions = 0;
  double median_seconds = 0.0;
  double slope = 0.0;  // least-squares log-log slope over all lengths of this mechanism
  std::uint64_t flops_attention = 0;
  std::uint64_t flops_ffn = 0;
  std::string regime;
};

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> v);

// Times one retention (or softmax attention) forward over batch x heads sequences per length:
// one warmup run, then `repetitions` timed runs, reporting the median.
std::vector<BenchResult> run_bench(const BenchConfig& config,
                                   const std::function<void(const BenchResult&)>& progress = {});

std::string bench_csv_header();
std::string format_bench_row(const BenchResult& r);
void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchResult>& results);

}  // namespace timely::cli
