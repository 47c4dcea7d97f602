#pragma once

#include <cstdint>
#include <vector>

#include "timely/ndarray.hpp"

namespace timely {

// Batch of sequences padded on the right to a common length T.
//   values:     [B x T x V] (continuous variates, or one-hot event codes)
//   lengths:    valid steps per row; empty means every row is full length
//   timestamps: per-row non-decreasing integer times; empty means regularly sampled
//   codes:      per-row event codes (event inputs only), used as next-token targets
struct SequenceBatch {
  NdArray values;
  std::vector<std::size_t> lengths;
  std::vector<std::vector<std::int64_t>> timestamps;
  std::vector<std::vector<std::int64_t>> codes;

  std::size_t batch() const { return values.shape()[0]; }
  std::size_t steps() const { return values.shape()[1]; }
  std::size_t variates() const { return values.shape()[2]; }
  std::size_t length(std::size_t row) const { return lengths.empty() ? steps() : lengths[row]; }
  bool irregular() const { return !timestamps.empty(); }

  // Rows [begin, end) as a new batch.
  SequenceBatch rows(std::size_t begin, std::size_t end) const;
  SequenceBatch select(const std::vector<std::size_t>& indices) const;
  // Leading `steps` timesteps of every row.
  SequenceBatch prefix(std::size_t steps) const;
};

}  // namespace timely
