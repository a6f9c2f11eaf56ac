#pragma once

#include <stdexcept>
#include <string>

namespace ctn {

/// Tensor shape or dimension mismatch.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model or training configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or wire-format failure. Maps to CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint decode failure with a machine-checkable kind.
class CheckpointError : public IoError {
 public:
  enum class Kind { Format, Version, Truncated, NameMismatch };

  CheckpointError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Text/CSV parse failure carrying the offending location (1-based, 0 = n/a).
class ParseError : public IoError {
 public:
  enum class Kind { Empty, Ragged, BadNumber, BadHeader, BadLabel, BadValueCount };

  ParseError(Kind kind, std::size_t row, std::size_t col, const std::string& what)
      : IoError(what), kind_(kind), row_(row), col_(col) {}
  Kind kind() const { return kind_; }
  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }

 private:
  Kind kind_;
  std::size_t row_;
  std::size_t col_;
};

}  // namespace ctn
