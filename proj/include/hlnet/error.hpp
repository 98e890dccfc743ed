#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hlnet {

/// Incompatible matrix dimensions passed to an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on an argument value was violated (range, class balance, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent on-disk data. Carries the byte offset (binary
/// containers) or the 1-based line number (text formats) where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  enum class Where { byte_offset, line };

  FormatError(const std::string& what, std::uint64_t position,
              Where where = Where::byte_offset)
      : std::runtime_error(what + (where == Where::line ? " (line " : " (byte offset ") +
                           std::to_string(position) + ")"),
        position_(position),
        where_(where) {}

  std::uint64_t position() const { return position_; }
  Where where() const { return where_; }

 private:
  std::uint64_t position_;
  Where where_;
};

/// A file that should exist could not be opened or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite quantity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hlnet
