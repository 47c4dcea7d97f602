#include "timely/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "timely/errors.hpp"

namespace timely {

double accuracy(const NdArray& probs, std::span<const std::int64_t> labels) {
  if (probs.rank() != 2 || probs.shape()[0] != labels.size()) throw DimensionError("accuracy: probs/labels mismatch");
  if (labels.empty()) throw InputError("accuracy of an empty set");
  const std::size_t n = labels.size();
  const std::size_t c = probs.shape()[1];
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = probs.raw() + i * c;
    const auto best = static_cast<std::int64_t>(std::max_element(row, row + c) - row);
    hit += best == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

double mean_absolute_error(const NdArray& pred, const NdArray& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("MAE shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  if (pred.size() == 0) throw InputError("MAE of an empty array");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double average_precision(std::span<const double> scores, std::span<const int> positives) {
  if (scores.size() != positives.size()) throw DimensionError("average_precision: size mismatch");
  const std::size_t total_pos = static_cast<std::size_t>(std::count_if(positives.begin(), positives.end(),
                                                                       [](int p) { return p != 0; }));
  if (total_pos == 0) return 0.0;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += positives[order[j]] != 0;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double auprc(const NdArray& probs, std::span<const std::int64_t> labels) {
  if (probs.rank() != 2 || probs.shape()[0] != labels.size()) throw DimensionError("auprc: probs/labels mismatch");
  const std::size_t n = labels.size();
  const std::size_t c = probs.shape()[1];
  auto column = [&](std::size_t k) {
    std::vector<double> s(n);
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = probs[i * c + k];
      pos[i] = labels[i] == static_cast<std::int64_t>(k);
    }
    return average_precision(s, pos);
  };
  if (c == 2) return column(1);
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) total += column(k);
  return total / static_cast<double>(c);
}

double majority_accuracy(std::span<const std::int64_t> labels) {
  if (labels.empty()) throw InputError("majority baseline of an empty set");
  std::map<std::int64_t, std::size_t> counts;
  for (auto l : labels) ++counts[l];
  std::size_t best = 0;
  for (const auto& [_, n] : counts) best = std::max(best, n);
  return static_cast<double>(best) / static_cast<double>(labels.size());
}

}  // namespace timely
