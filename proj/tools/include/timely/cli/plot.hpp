#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace timely::cli {

// SVG line plot of one forecast: prompt, forecast and ground truth over token index, with a
// dashed marker at the training length.
std::string forecast_svg(const std::vector<double>& prompt, const std::vector<double>& forecast,
                         const std::vector<double>& truth, std::size_t train_tokens);

}  // namespace timely::cli
