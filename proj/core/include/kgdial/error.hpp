#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kgdial {

// Exit-code families used by the command line front end. Every library error
// carries one so the CLI can map failures without string matching.
enum class ErrorKind {
  kUsage = 2,
  kIo = 3,
  kFormat = 4,
  kValidation = 5,
  kNumeric = 6,
  kAlignment = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message)
      : Error(ErrorKind::kUsage, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::kIo, message) {}
};

/// Malformed input text. `offset` is the byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : Error(ErrorKind::kFormat,
              message + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A required field is missing or has the wrong type; `field()` names it.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& field)
      : Error(ErrorKind::kFormat, "schema error: field \"" + field + "\""),
        field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// File header or version does not match what the reader understands.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message)
      : Error(ErrorKind::kFormat, message) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error(ErrorKind::kValidation, message) {}
};

/// Shape mismatch inside a tensor operation.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& op, const std::string& detail)
      : Error(ErrorKind::kUsage, op + ": dimension mismatch: " + detail) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message)
      : Error(ErrorKind::kNumeric, message) {}
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& id)
      : Error(ErrorKind::kAlignment, "alignment error at id \"" + id + "\""),
        id_(id) {}

  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

}  // namespace kgdial
