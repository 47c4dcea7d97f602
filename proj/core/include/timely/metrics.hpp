#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "timely/ndarray.hpp"

namespace timely {

// Fraction of rows of probs [N x C] whose argmax equals the label.
double accuracy(const NdArray& probs, std::span<const std::int64_t> labels);

double mean_absolute_error(const NdArray& pred, const NdArray& target);

// Average precision of binary scores (step-wise area under the precision-recall curve).
// Tied scores are ranked as one block. Returns 0 when there are no positives.
double average_precision(std::span<const double> scores, std::span<const int> positives);

// Macro one-vs-rest average precision over the columns of probs [N x C]; for C = 2 only
// the positive class (column 1) is scored.
double auprc(const NdArray& probs, std::span<const std::int64_t> labels);

// Accuracy of always predicting the most frequent label.
double majority_accuracy(std::span<const std::int64_t> labels);

}  // namespace timely
