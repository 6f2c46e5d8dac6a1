#pragma once

#include <charconv>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pointresnet/error.hpp"

namespace pointresnet {

struct Metrics {
  double eval_acc = 0;
  double avg_class_acc = 0;
  double per_point_acc = 0;
  std::size_t total = 0;
  std::size_t correct = 0;
  /// confusion[target][prediction]; empty for segmentation.
  std::vector<std::vector<std::size_t>> confusion;
};

/// Shortest decimal form that reads back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Overall accuracy, mean per-class accuracy over classes that occur in
/// `targets`, and the k x k confusion matrix.
inline Metrics metrics_classification(std::span<const int> predictions,
                                      std::span<const int> targets, std::size_t k) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw DegenerateInputError("metrics: empty evaluation set");
  Metrics m;
  m.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
      throw InvalidArgument("metrics: label outside [0, " + std::to_string(k) + ") at position " +
                            std::to_string(i));
    }
    ++m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    if (t == p) ++m.correct;
  }
  m.total = targets.size();
  m.eval_acc = static_cast<double>(m.correct) / static_cast<double>(m.total);
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0;
    for (std::size_t v : m.confusion[c]) row += v;
    if (row == 0) continue;
    sum += static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
    ++present;
  }
  m.avg_class_acc = sum / static_cast<double>(present);
  return m;
}

/// Per-point accuracy pooled over every point of every sample.
inline Metrics metrics_segmentation(const std::vector<std::vector<int>>& predictions,
                                    const std::vector<std::vector<int>>& targets) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("segmentation metrics: " + std::to_string(predictions.size()) +
                     " predicted samples vs " + std::to_string(targets.size()));
  }
  if (targets.empty()) throw DegenerateInputError("segmentation metrics: empty evaluation set");
  Metrics m;
  for (std::size_t s = 0; s < targets.size(); ++s) {
    if (predictions[s].size() != targets[s].size()) {
      throw ShapeError("segmentation metrics: sample " + std::to_string(s) + " has " +
                       std::to_string(predictions[s].size()) + " predictions for " +
                       std::to_string(targets[s].size()) + " points");
    }
    for (std::size_t i = 0; i < targets[s].size(); ++i)
      if (predictions[s][i] == targets[s][i]) ++m.correct;
    m.total += targets[s].size();
  }
  if (m.total == 0) throw DegenerateInputError("segmentation metrics: no points");
  m.per_point_acc = static_cast<double>(m.correct) / static_cast<double>(m.total);
  m.eval_acc = m.per_point_acc;
  return m;
}

/// `key = value` lines.
inline std::string metrics_report(const Metrics& m) {
  std::string s;
  s += "eval_acc = " + format_number(m.eval_acc) + "\n";
  s += "avg_class_acc = " + format_number(m.avg_class_acc) + "\n";
  s += "per_point_acc = " + format_number(m.per_point_acc) + "\n";
  s += "correct = " + std::to_string(m.correct) + "\n";
  s += "total = " + std::to_string(m.total) + "\n";
  return s;
}

/// One comma-separated row per target class.
inline std::string confusion_csv(const Metrics& m) {
  std::string s;
  for (const auto& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) s += ',';
      s += std::to_string(row[j]);
    }
    s += '\n';
  }
  return s;
}

}  // namespace pointresnet
