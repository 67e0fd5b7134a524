#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace teller::cli {

namespace {

constexpr double kW = 640, kH = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + num(kW / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
         "</text>\n";
}

std::string axes(double y_max, const std::string& x_label, const std::string& y_label) {
  const double x0 = kLeft, y0 = kH - kBottom;
  std::string s = "<line x1=\"" + num(x0) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y0) +
                  "\" stroke=\"black\"/>\n<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" +
                  num(kW - kRight) + "\" y2=\"" + num(y0) + "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = y_max * k / 4.0;
    const double y = y0 - (y0 - kTop) * k / 4.0;
    s += "<text x=\"" + num(x0 - 4) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
  }
  s += "<text x=\"" + num((kLeft + kW - kRight) / 2) + "\" y=\"" + num(kH - 10) + "\" text-anchor=\"middle\">" +
       escape(x_label) + "</text>\n";
  s += "<text x=\"14\" y=\"" + num((kTop + y0) / 2) + "\" transform=\"rotate(-90 14 " + num((kTop + y0) / 2) +
       ")\" text-anchor=\"middle\">" + escape(y_label) + "</text>\n";
  return s;
}

}  // namespace

std::vector<std::vector<double>> stage_matrix(const pipeline::LatencyTrace& trace) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(trace.chunks()),
                                       std::vector<double>(pipeline::kStageCount, 0.0));
  for (const auto& r : trace.records) {
    out[static_cast<std::size_t>(r.chunk)][static_cast<std::size_t>(r.stage)] += r.duration_ms();
  }
  return out;
}

std::string latency_svg(const std::vector<std::vector<double>>& stages, double limit_ms, const std::string& title) {
  double y_max = limit_ms;
  for (const auto& c : stages) {
    double total = 0.0;
    for (double v : c) total += v;
    y_max = std::max(y_max, total);
  }
  y_max *= 1.1;
  const double x0 = kLeft, y0 = kH - kBottom, plot_w = kW - kLeft - kRight, plot_h = y0 - kTop;
  std::string s = header(title) + axes(y_max, "chunk", "ms");
  const double slot = stages.empty() ? plot_w : plot_w / static_cast<double>(stages.size());
  for (std::size_t c = 0; c < stages.size(); ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < stages[c].size(); ++k) {
      const double h = stages[c][k] / y_max * plot_h;
      const double y = y0 - (acc / y_max * plot_h) - h;
      s += "<rect x=\"" + num(x0 + slot * c + slot * 0.15) + "\" y=\"" + num(y) + "\" width=\"" + num(slot * 0.7) +
           "\" height=\"" + num(h) + "\" fill=\"" + kColors[k % 5] + "\"/>\n";
      acc += stages[c][k];
    }
  }
  const double ly = y0 - limit_ms / y_max * plot_h;
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(kW - kRight) + "\" y2=\"" + num(ly) +
       "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
  for (int k = 0; k < pipeline::kStageCount; ++k) {
    const double lx = kLeft + 10 + 90.0 * k;
    s += "<rect x=\"" + num(lx) + "\" y=\"" + num(kTop - 12) + "\" width=\"10\" height=\"10\" fill=\"" + kColors[k] +
         "\"/><text x=\"" + num(lx + 14) + "\" y=\"" + num(kTop - 3) + "\">" +
         pipeline::stage_name(static_cast<pipeline::Stage>(k)) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string line_svg(const std::vector<double>& x, const std::vector<double>& y, const std::string& title,
                     const std::string& x_label, const std::string& y_label) {
  double y_max = 0.0;
  for (double v : y) {
    if (std::isfinite(v)) y_max = std::max(y_max, v);
  }
  if (y_max <= 0.0) y_max = 1.0;
  y_max *= 1.1;
  const double x_min = x.empty() ? 0.0 : *std::min_element(x.begin(), x.end());
  double x_span = x.empty() ? 1.0 : *std::max_element(x.begin(), x.end()) - x_min;
  if (x_span <= 0.0) x_span = 1.0;
  const double x0 = kLeft, y0 = kH - kBottom, plot_w = kW - kLeft - kRight - 20, plot_h = y0 - kTop;
  std::string s = header(title) + axes(y_max, x_label, y_label);
  std::string pts;
  for (std::size_t k = 0; k < x.size() && k < y.size(); ++k) {
    const double px = x0 + 10 + (x[k] - x_min) / x_span * plot_w;
    const double py = y0 - y[k] / y_max * plot_h;
    pts += num(px) + "," + num(py) + " ";
    s += "<circle cx=\"" + num(px) + "\" cy=\"" + num(py) + "\" r=\"3\" fill=\"#4e79a7\"/>\n";
    if (x.size() <= 12 || k == 0 || k + 1 == x.size()) {
      s += "<text x=\"" + num(px) + "\" y=\"" + num(y0 + 14) + "\" text-anchor=\"middle\">" + num(x[k]) + "</text>\n";
    }
  }
  s += "<polyline fill=\"none\" stroke=\"#4e79a7\" points=\"" + pts + "\"/>\n";
  return s + "</svg>\n";
}

}  // namespace teller::cli
