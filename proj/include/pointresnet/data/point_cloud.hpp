#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pointresnet/data/text.hpp"
#include "pointresnet/error.hpp"
#include "pointresnet/random.hpp"

namespace pointresnet {

using Point = std::array<float, 3>;

struct PointCloudSample {
  std::vector<Point> points;
  std::optional<int> class_label;
  std::vector<int> part_labels;  // empty when unlabeled; otherwise one per point
  std::string source_id;
};

/// Translates the centroid to the origin and scales the farthest point to norm 1.
inline std::vector<Point> normalize_unit_sphere(const std::vector<Point>& points) {
  if (points.empty()) throw DegenerateInputError("normalize: empty point set");
  double c[3] = {0, 0, 0};
  double extent = 0;
  for (const auto& p : points)
    for (int a = 0; a < 3; ++a) {
      c[a] += p[a];
      extent = std::max(extent, std::abs(static_cast<double>(p[a])));
    }
  for (double& v : c) v /= static_cast<double>(points.size());
  double max_norm = 0;
  for (const auto& p : points) {
    const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
    max_norm = std::max(max_norm, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  if (!(max_norm > 1e-9 * std::max(1.0, extent)))
    throw DegenerateInputError("normalize: all points coincide; cannot scale to the unit sphere");
  std::vector<Point> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    for (int a = 0; a < 3; ++a)
      out[i][a] = static_cast<float>((points[i][a] - c[a]) / max_norm);
  return out;
}

/// Whitespace-separated x y z per line; blank lines are skipped.
inline std::vector<Point> parse_pts(std::string_view text) {
  std::vector<Point> points;
  for (const auto& line : text::significant_lines(text, false)) {
    if (line.tokens.size() < 3) {
      throw ParseError(ParseErrorKind::missing_field, line.number,
                       "points: expected 3 coordinates, found " + std::to_string(line.tokens.size()));
    }
    if (line.tokens.size() > 3) {
      throw ParseError(ParseErrorKind::bad_number, line.number,
                       "points: unexpected extra token '" + std::string(line.tokens[3]) + "'");
    }
    Point p;
    for (int a = 0; a < 3; ++a) p[a] = static_cast<float>(text::number(line.tokens[a], line.number, "points"));
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      throw ParseError(ParseErrorKind::bad_number, line.number, "points: coordinate overflows float");
    points.push_back(p);
  }
  if (points.empty()) throw ParseError(ParseErrorKind::truncated, 1, "points: no points");
  return points;
}

/// One non-negative integer per line.
inline std::vector<int> parse_seg(std::string_view text) {
  std::vector<int> labels;
  for (const auto& line : text::significant_lines(text, false)) {
    if (line.tokens.size() != 1) {
      throw ParseError(ParseErrorKind::bad_number, line.number,
                       "labels: expected one integer per line, found " + std::to_string(line.tokens.size()) +
                           " tokens");
    }
    const long long v = text::integer(line.tokens[0], line.number, "labels");
    if (v < 0 || v > 1'000'000)
      throw ParseError(ParseErrorKind::bad_number, line.number, "labels: label " + std::to_string(v) + " out of range");
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

/// Pairs a points file with its per-point labels file.
inline PointCloudSample parse_pts_seg(std::string_view points_text, std::string_view labels_text,
                                      std::string source_id = {}) {
  PointCloudSample s;
  s.points = parse_pts(points_text);
  s.part_labels = parse_seg(labels_text);
  if (s.points.size() != s.part_labels.size()) {
    const bool fewer_labels = s.part_labels.size() < s.points.size();
    const auto lines = text::significant_lines(fewer_labels ? points_text : labels_text, false);
    const std::size_t first_extra = std::min(s.points.size(), s.part_labels.size());
    throw ParseError(ParseErrorKind::count_mismatch, lines[first_extra].number,
                     std::to_string(s.points.size()) + " points but " + std::to_string(s.part_labels.size()) +
                         " labels" + (fewer_labels ? " (first unlabeled point)" : " (first extra label)"));
  }
  s.source_id = std::move(source_id);
  return s;
}

inline std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_pts(const std::vector<Point>& points) {
  std::string out;
  out.reserve(points.size() * 30);
  for (const auto& p : points) {
    out += format_float(p[0]);
    out += ' ';
    out += format_float(p[1]);
    out += ' ';
    out += format_float(p[2]);
    out += '\n';
  }
  return out;
}

inline std::string format_seg(const std::vector<int>& labels) {
  std::string out;
  for (int l : labels) {
    out += std::to_string(l);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

enum class ShapeKind { sphere = 0, cube = 1, cylinder = 2 };

inline constexpr std::array<ShapeKind, 3> all_shape_kinds{ShapeKind::sphere, ShapeKind::cube, ShapeKind::cylinder};

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cylinder: return "cylinder";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(std::string_view name) {
  for (ShapeKind k : all_shape_kinds)
    if (name == to_string(k)) return k;
  throw ConfigError("unknown shape '" + std::string(name) + "' (expected sphere, cube or cylinder)");
}

inline std::size_t part_count(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return 2;
    case ShapeKind::cube: return 6;
    case ShapeKind::cylinder: return 3;
  }
  return 0;
}

/// Uniform surface samples with analytic part labels.
///   sphere   radius 1; part 0 for z >= 0, 1 below.
///   cube     inscribed in the unit sphere; part = face (+x, -x, +y, -y, +z, -z).
///   cylinder r = h = 1 about z, scaled so the rims touch the unit sphere;
///            part 0 side, 1 top cap, 2 bottom cap.
inline PointCloudSample make_synthetic(ShapeKind kind, std::size_t n, Rng& rng) {
  if (n < 8) throw InvalidArgument("synthetic shapes need at least 8 points, got " + std::to_string(n));
  PointCloudSample s;
  s.class_label = static_cast<int>(kind);
  s.points.resize(n);
  s.part_labels.resize(n);
  constexpr double two_pi = 2 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0, y = 0, z = 0;
    int part = 0;
    switch (kind) {
      case ShapeKind::sphere: {
        z = rng.uniform(-1, 1);
        const double phi = two_pi * rng.uniform();
        const double r = std::sqrt(std::max(0.0, 1 - z * z));
        x = r * std::cos(phi);
        y = r * std::sin(phi);
        part = z >= 0 ? 0 : 1;
        break;
      }
      case ShapeKind::cube: {
        const double h = 1 / std::sqrt(3.0);
        part = static_cast<int>(rng.below(6));
        const double u = rng.uniform(-h, h), v = rng.uniform(-h, h);
        const double side = part % 2 == 0 ? h : -h;
        switch (part / 2) {
          case 0: x = side, y = u, z = v; break;
          case 1: x = u, y = side, z = v; break;
          default: x = u, y = v, z = side; break;
        }
        break;
      }
      case ShapeKind::cylinder: {
        // Side area 2*pi*r*h = 2*pi, each cap pi*r^2 = pi.
        const double scale = 1 / std::sqrt(1.25);
        const double pick = rng.uniform() * 4;
        const double phi = two_pi * rng.uniform();
        if (pick < 2) {
          part = 0;
          x = std::cos(phi), y = std::sin(phi), z = rng.uniform(-0.5, 0.5);
        } else {
          part = pick < 3 ? 1 : 2;
          const double r = std::sqrt(rng.uniform());
          x = r * std::cos(phi), y = r * std::sin(phi), z = part == 1 ? 0.5 : -0.5;
        }
        x *= scale, y *= scale, z *= scale;
        break;
      }
    }
    s.points[i] = {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
    // Label from the stored coordinate so "part 0 iff z >= 0" holds exactly.
    if (kind == ShapeKind::sphere) part = s.points[i][2] >= 0.0f ? 0 : 1;
    s.part_labels[i] = part;
  }
  return s;
}

}  // namespace pointresnet
