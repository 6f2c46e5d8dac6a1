#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pointresnet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

enum class ParseErrorKind {
  malformed_header,
  bad_counts,
  bad_number,
  missing_field,
  index_out_of_range,
  truncated,
  count_mismatch,
  duplicate_entry,
  io,
};

inline const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::malformed_header: return "malformed header";
    case ParseErrorKind::bad_counts: return "bad counts line";
    case ParseErrorKind::bad_number: return "bad number";
    case ParseErrorKind::missing_field: return "missing field";
    case ParseErrorKind::index_out_of_range: return "index out of range";
    case ParseErrorKind::truncated: return "truncated input";
    case ParseErrorKind::count_mismatch: return "count mismatch";
    case ParseErrorKind::duplicate_entry: return "duplicate entry";
    case ParseErrorKind::io: return "i/o failure";
  }
  return "parse error";
}

/// A structured parse failure. `line` is 1-based; 0 means "no specific line".
class ParseError : public Error {
 public:
  ParseError(ParseErrorKind kind, std::size_t line, const std::string& detail)
      : Error(format(kind, line, detail)), kind_(kind), line_(line), detail_(detail) {}

  ParseErrorKind kind() const noexcept { return kind_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  static std::string format(ParseErrorKind kind, std::size_t line,
                            const std::string& detail) {
    std::string msg = to_string(kind);
    if (line != 0) msg += " at line " + std::to_string(line);
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  ParseErrorKind kind_;
  std::size_t line_;
  std::string detail_;
};

enum class CheckpointErrorKind { io, bad_magic, version_mismatch, truncated, malformed, mismatch };

inline const char* to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::io: return "io";
    case CheckpointErrorKind::bad_magic: return "bad_magic";
    case CheckpointErrorKind::version_mismatch: return "version_mismatch";
    case CheckpointErrorKind::truncated: return "truncated";
    case CheckpointErrorKind::malformed: return "malformed";
    case CheckpointErrorKind::mismatch: return "mismatch";
  }
  return "unknown";
}

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : Error(what), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

}  // namespace pointresnet
