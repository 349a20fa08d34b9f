#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ocb {

// Error hierarchy. The CLI maps these onto exit codes:
// ConfigError -> 1 (usage), DataError / ParseError -> 2, anything else -> 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument combination supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a documented invariant (dimensions, ordering, ranges).
/// Carries the 1-based line number when the data came from a line-oriented file.
class DataError : public Error {
 public:
  explicit DataError(const std::string& message, std::optional<std::size_t> line = std::nullopt)
      : Error(line ? "line " + std::to_string(*line) + ": " + message : message),
        line_(line),
        detail_(message) {}

  std::optional<std::size_t> line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  std::optional<std::size_t> line_;
  std::string detail_;
};

/// Syntax or name-resolution failure in the rule DSL; position is a 0-based
/// character offset into the rule text.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t position,
             std::optional<std::size_t> line = std::nullopt)
      : Error((line ? "line " + std::to_string(*line) + ", " : std::string()) + "position " +
              std::to_string(position) + ": " + message),
        position_(position),
        line_(line),
        detail_(message) {}

  std::size_t position() const { return position_; }
  std::optional<std::size_t> line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  std::size_t position_;
  std::optional<std::size_t> line_;
  std::string detail_;
};

}  // namespace ocb
