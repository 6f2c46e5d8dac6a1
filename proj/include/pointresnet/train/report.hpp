#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "pointresnet/data/text.hpp"
#include "pointresnet/train/trainer.hpp"

namespace pointresnet {

/// Reads a training log written by `run_training`; the header line is
/// optional and the eval_acc column may be empty.
inline std::vector<EpochSummary> parse_training_log(std::string_view content) {
  std::vector<EpochSummary> out;
  std::size_t number = 0, pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++number;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line == log_header()) continue;
    std::vector<std::string_view> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (f.size() != 7)
      throw ParseError(ParseErrorKind::missing_field, number,
                       "expected 7 comma-separated fields, found " + std::to_string(f.size()));
    EpochSummary s;
    s.epoch = static_cast<std::size_t>(text::integer(f[0], number, "epoch"));
    s.lr = text::number(f[1], number, "lr");
    s.cross_entropy = text::number(f[2], number, "H");
    s.regularizer = text::number(f[3], number, "L_reg");
    s.total = text::number(f[4], number, "total");
    s.train_acc = text::number(f[5], number, "train_acc");
    if (!f[6].empty()) s.eval_acc = text::number(f[6], number, "eval_acc");
    out.push_back(s);
  }
  if (out.empty()) throw ParseError(ParseErrorKind::truncated, number + 1, "log has no epoch lines");
  return out;
}

/// Curves as comma-separated values, one row per epoch.
inline std::string curves_csv(const std::vector<EpochSummary>& log) {
  std::string s = std::string(log_header()) + "\n";
  for (const auto& e : log) s += format_log_line(e) + "\n";
  return s;
}

namespace detail {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

inline std::string svg_number(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.2f", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline std::string svg_label(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.4g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline std::string svg_panel(double ox, double oy, double w, double h, const std::string& title,
                             const std::vector<Series>& series) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double l = ox + 56, r = ox + w - 12, t = oy + 28, b = oy + h - 36;
  auto px = [&](double v) { return l + (v - x0) / (x1 - x0) * (r - l); };
  auto py = [&](double v) { return b - (v - y0) / (y1 - y0) * (b - t); };

  std::string s;
  s += "<text x=\"" + svg_number(ox + w / 2) + "\" y=\"" + svg_number(oy + 18) +
       "\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  s += "<rect x=\"" + svg_number(l) + "\" y=\"" + svg_number(t) + "\" width=\"" + svg_number(r - l) +
       "\" height=\"" + svg_number(b - t) + "\" fill=\"none\" stroke=\"#888\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4, xv = x0 + (x1 - x0) * i / 4;
    s += "<text x=\"" + svg_number(l - 4) + "\" y=\"" + svg_number(py(yv) + 4) +
         "\" text-anchor=\"end\" font-size=\"10\">" + svg_label(yv) + "</text>\n";
    s += "<text x=\"" + svg_number(px(xv)) + "\" y=\"" + svg_number(b + 14) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + svg_label(xv) + "</text>\n";
  }
  s += "<text x=\"" + svg_number((l + r) / 2) + "\" y=\"" + svg_number(b + 30) +
       "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";
  double ly = t + 12;
  for (const auto& ser : series) {
    if (ser.x.empty()) continue;
    s += "<polyline fill=\"none\" stroke=\"" + ser.color + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ser.x.size(); ++i) s += svg_number(px(ser.x[i])) + "," + svg_number(py(ser.y[i])) + " ";
    s += "\"/>\n";
    s += "<text x=\"" + svg_number(r - 6) + "\" y=\"" + svg_number(ly) + "\" text-anchor=\"end\" font-size=\"11\" fill=\"" +
         ser.color + "\">" + ser.label + "</text>\n";
    ly += 14;
  }
  return s;
}

}  // namespace detail

/// Two-panel SVG: losses on the left, accuracies on the right.
inline std::string curves_svg(const std::vector<EpochSummary>& log) {
  detail::Series h{"H", "#1f77b4", {}, {}}, total{"total", "#ff7f0e", {}, {}};
  detail::Series train{"train_acc", "#2ca02c", {}, {}}, eval{"eval_acc", "#d62728", {}, {}};
  for (const auto& e : log) {
    const double x = static_cast<double>(e.epoch);
    h.x.push_back(x), h.y.push_back(e.cross_entropy);
    total.x.push_back(x), total.y.push_back(e.total);
    train.x.push_back(x), train.y.push_back(e.train_acc);
    if (e.eval_acc) eval.x.push_back(x), eval.y.push_back(*e.eval_acc);
  }
  std::string s =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"340\" font-family=\"sans-serif\">\n"
      "<rect width=\"900\" height=\"340\" fill=\"white\"/>\n";
  s += detail::svg_panel(0, 0, 450, 340, "loss", {h, total});
  s += detail::svg_panel(450, 0, 450, 340, "accuracy", {train, eval});
  s += "</svg>\n";
  return s;
}

}  // namespace pointresnet
