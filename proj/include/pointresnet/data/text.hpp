#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pointresnet/error.hpp"

namespace pointresnet::text {

/// One physical line with its 1-based number and whitespace-split tokens.
struct Line {
  std::size_t number = 0;
  std::vector<std::string_view> tokens;
};

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

inline std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Lines that carry tokens. With `comments`, text after '#' is dropped.
/// `last_line` receives the number of physical lines seen.
inline std::vector<Line> significant_lines(std::string_view text, bool comments,
                                           std::size_t* last_line = nullptr) {
  std::vector<Line> out;
  std::size_t number = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++number;
    if (comments) {
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    }
    auto tokens = split(line);
    if (!tokens.empty()) out.push_back({number, std::move(tokens)});
    pos = end + 1;
  }
  if (last_line) *last_line = number;
  return out;
}

inline bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size() && std::isfinite(out);
}

inline bool parse_long(std::string_view tok, long long& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

inline double number(std::string_view tok, std::size_t line, const char* what) {
  double v;
  if (!parse_double(tok, v)) {
    throw ParseError(ParseErrorKind::bad_number, line,
                     std::string(what) + ": '" + std::string(tok) + "' is not a finite number");
  }
  return v;
}

inline long long integer(std::string_view tok, std::size_t line, const char* what) {
  long long v;
  if (!parse_long(tok, v)) {
    throw ParseError(ParseErrorKind::bad_number, line,
                     std::string(what) + ": '" + std::string(tok) + "' is not an integer");
  }
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseErrorKind::io, 0, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw ParseError(ParseErrorKind::io, 0, "read failed: " + path);
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(ParseErrorKind::io, 0, "cannot create " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw ParseError(ParseErrorKind::io, 0, "write failed: " + path);
}

}  // namespace pointresnet::text
