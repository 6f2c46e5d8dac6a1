#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pointresnet/data/point_cloud.hpp"
#include "pointresnet/data/text.hpp"
#include "pointresnet/error.hpp"
#include "pointresnet/random.hpp"

namespace pointresnet {

struct TriangleMesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

namespace detail {

inline bool starts_with_digit(std::string_view s) {
  return !s.empty() && ((s[0] >= '0' && s[0] <= '9') || s[0] == '+' || s[0] == '-');
}

}  // namespace detail

/// Parses OFF text. Accepts a missing header, a header on its own line, and
/// the "OFF<V> <F> <E>" form where the header runs into the counts. Polygons
/// are fan-triangulated; '#' comments and blank lines are ignored.
inline TriangleMesh parse_off(std::string_view text) {
  std::size_t last_line = 0;
  const auto lines = text::significant_lines(text, true, &last_line);
  const std::size_t eof_line = last_line + 1;
  if (lines.empty()) throw ParseError(ParseErrorKind::truncated, eof_line, "empty OFF input");

  std::size_t cursor = 0;
  std::vector<std::string_view> counts;
  std::size_t counts_line = lines[0].number;
  std::string_view first = lines[0].tokens[0];
  if (first.substr(0, 3) == "OFF") {
    std::string_view rest = first.substr(3);
    if (!rest.empty()) {
      if (!detail::starts_with_digit(rest))
        throw ParseError(ParseErrorKind::malformed_header, lines[0].number,
                         "unrecognized header '" + std::string(first) + "'");
      counts.push_back(rest);
    }
    counts.insert(counts.end(), lines[0].tokens.begin() + 1, lines[0].tokens.end());
    ++cursor;
    if (counts.empty()) {
      if (cursor == lines.size()) throw ParseError(ParseErrorKind::truncated, eof_line, "missing counts line");
      counts = lines[cursor].tokens;
      counts_line = lines[cursor].number;
      ++cursor;
    }
  } else if (detail::starts_with_digit(first)) {
    counts = lines[0].tokens;
    ++cursor;
  } else {
    throw ParseError(ParseErrorKind::malformed_header, lines[0].number,
                     "expected 'OFF' or a counts line, found '" + std::string(first) + "'");
  }

  if (counts.size() < 2 || counts.size() > 3)
    throw ParseError(ParseErrorKind::bad_counts, counts_line,
                     "expected 'vertices faces [edges]', found " + std::to_string(counts.size()) + " values");
  long long nums[3] = {0, 0, 0};
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!text::parse_long(counts[i], nums[i]) || nums[i] < 0)
      throw ParseError(ParseErrorKind::bad_counts, counts_line,
                       "count '" + std::string(counts[i]) + "' is not a non-negative integer");
  }
  const auto nv = static_cast<std::size_t>(nums[0]), nf = static_cast<std::size_t>(nums[1]);
  const std::size_t available = lines.size() - cursor;

  TriangleMesh mesh;
  mesh.vertices.reserve(std::min(nv, available));
  for (std::size_t i = 0; i < nv; ++i, ++cursor) {
    if (cursor == lines.size())
      throw ParseError(ParseErrorKind::truncated, eof_line,
                       "expected " + std::to_string(nv) + " vertices, found " + std::to_string(i));
    const auto& line = lines[cursor];
    if (line.tokens.size() < 3)
      throw ParseError(ParseErrorKind::missing_field, line.number,
                       "vertex needs 3 coordinates, found " + std::to_string(line.tokens.size()));
    mesh.vertices.push_back({text::number(line.tokens[0], line.number, "vertex"),
                             text::number(line.tokens[1], line.number, "vertex"),
                             text::number(line.tokens[2], line.number, "vertex")});
  }

  mesh.faces.reserve(std::min(nf, available));
  for (std::size_t i = 0; i < nf; ++i, ++cursor) {
    if (cursor == lines.size())
      throw ParseError(ParseErrorKind::truncated, eof_line,
                       "expected " + std::to_string(nf) + " faces, found " + std::to_string(i));
    const auto& line = lines[cursor];
    const long long k = text::integer(line.tokens[0], line.number, "face size");
    if (k < 3)
      throw ParseError(ParseErrorKind::bad_number, line.number,
                       "face needs at least 3 vertices, declares " + std::to_string(k));
    if (line.tokens.size() < static_cast<std::size_t>(k) + 1)
      throw ParseError(ParseErrorKind::missing_field, line.number,
                       "face declares " + std::to_string(k) + " vertices, lists " +
                           std::to_string(line.tokens.size() - 1));
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const long long v = text::integer(line.tokens[j + 1], line.number, "face index");
      if (v < 0 || static_cast<std::size_t>(v) >= nv)
        throw ParseError(ParseErrorKind::index_out_of_range, line.number,
                         "face references vertex " + std::to_string(v) + " of " + std::to_string(nv));
      idx[j] = static_cast<std::uint32_t>(v);
    }
    for (std::size_t j = 1; j + 1 < idx.size(); ++j) mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
  }
  return mesh;
}

/// OFF text for `mesh`; `fused_header` writes "OFF<V> <F> 0" on one line.
inline std::string format_off(const TriangleMesh& mesh, bool fused_header = false) {
  std::string out = fused_header ? "OFF" : "OFF\n";
  out += std::to_string(mesh.vertices.size()) + " " + std::to_string(mesh.faces.size()) + " 0\n";
  char buf[32];
  for (const auto& v : mesh.vertices) {
    for (int a = 0; a < 3; ++a) {
      auto res = std::to_chars(buf, buf + sizeof buf, v[a]);
      out.append(buf, res.ptr);
      out += a < 2 ? ' ' : '\n';
    }
  }
  for (const auto& f : mesh.faces)
    out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
  return out;
}

inline double triangle_area(const TriangleMesh& mesh, std::size_t f) {
  const auto& a = mesh.vertices[mesh.faces[f][0]];
  const auto& b = mesh.vertices[mesh.faces[f][1]];
  const auto& c = mesh.vertices[mesh.faces[f][2]];
  const double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const double cx = u[1] * v[2] - u[2] * v[1], cy = u[2] * v[0] - u[0] * v[2], cz = u[0] * v[1] - u[1] * v[0];
  return 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
}

/// `n` points uniform over the surface: a triangle is chosen with probability
/// proportional to its area, then a point inside it via
/// (1 - sqrt(r1)) A + sqrt(r1)(1 - r2) B + sqrt(r1) r2 C.
/// `face_of` optionally receives the triangle index of each point.
inline std::vector<Point> sample_points(const TriangleMesh& mesh, std::size_t n, Rng& rng,
                                        std::vector<std::size_t>* face_of = nullptr) {
  if (n == 0) throw InvalidArgument("sample_points: n must be positive");
  for (const auto& f : mesh.faces)
    for (auto i : f)
      if (i >= mesh.vertices.size())
        throw InvalidArgument("sample_points: face references vertex " + std::to_string(i) + " of " +
                              std::to_string(mesh.vertices.size()));
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += triangle_area(mesh, f);
    cumulative[f] = total;
  }
  if (!(total > 0) || !std::isfinite(total))
    throw DegenerateInputError("sample_points: mesh has zero surface area (" + std::to_string(mesh.faces.size()) +
                               " faces)");

  std::vector<Point> out(n);
  if (face_of) face_of->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    std::size_t f = it == cumulative.end() ? cumulative.size() - 1 : static_cast<std::size_t>(it - cumulative.begin());
    const double s = std::sqrt(rng.uniform()), r2 = rng.uniform();
    const auto& a = mesh.vertices[mesh.faces[f][0]];
    const auto& b = mesh.vertices[mesh.faces[f][1]];
    const auto& c = mesh.vertices[mesh.faces[f][2]];
    const double wa = 1 - s, wb = s * (1 - r2), wc = s * r2;
    for (int k = 0; k < 3; ++k) out[i][k] = static_cast<float>(wa * a[k] + wb * b[k] + wc * c[k]);
    if (face_of) (*face_of)[i] = f;
  }
  return out;
}

}  // namespace pointresnet
