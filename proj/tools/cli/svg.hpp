#pragma once

// Minimal standalone SVG charts for CLI artifacts.

#include <string>
#include <vector>

#include "teller/pipeline.hpp"

namespace teller::cli {

// Per-chunk stacked bars of stage durations with a horizontal limit line.
std::string latency_svg(const std::vector<std::vector<double>>& stage_ms_per_chunk, double limit_ms,
                        const std::string& title);
std::vector<std::vector<double>> stage_matrix(const pipeline::LatencyTrace& trace);

// Polyline chart of y over x.
std::string line_svg(const std::vector<double>& x, const std::vector<double>& y, const std::string& title,
                     const std::string& x_label, const std::string& y_label);

}  // namespace teller::cli
