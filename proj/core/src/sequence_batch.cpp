#include "timely/sequence_batch.hpp"

#include <algorithm>

#include "timely/errors.hpp"

namespace timely {

SequenceBatch SequenceBatch::select(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw InputError("selecting zero rows from a batch");
  const std::size_t t = steps();
  const std::size_t v = variates();
  SequenceBatch out;
  out.values = NdArray(Shape{indices.size(), t, v});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t r = indices[i];
    if (r >= batch()) throw InputError("row index out of range");
    std::copy_n(values.raw() + r * t * v, t * v, out.values.raw() + i * t * v);
    if (!lengths.empty()) out.lengths.push_back(lengths[r]);
    if (!timestamps.empty()) out.timestamps.push_back(timestamps[r]);
    if (!codes.empty()) out.codes.push_back(codes[r]);
  }
  return out;
}

SequenceBatch SequenceBatch::rows(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return select(idx);
}

SequenceBatch SequenceBatch::prefix(std::size_t n) const {
  if (n == 0 || n > steps()) throw InputError("prefix length out of range");
  const std::size_t b = batch();
  const std::size_t t = steps();
  const std::size_t v = variates();
  SequenceBatch out;
  out.values = NdArray(Shape{b, n, v});
  for (std::size_t r = 0; r < b; ++r) {
    std::copy_n(values.raw() + r * t * v, n * v, out.values.raw() + r * n * v);
    if (!lengths.empty()) out.lengths.push_back(std::min(lengths[r], n));
    if (!timestamps.empty()) out.timestamps.emplace_back(timestamps[r].begin(), timestamps[r].begin() + n);
    if (!codes.empty()) {
      const auto& c = codes[r];
      out.codes.emplace_back(c.begin(), c.begin() + std::min(c.size(), n));
    }
  }
  return out;
}

}  // namespace timely
