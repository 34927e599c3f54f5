#pragma once

#include <stdexcept>
#include <string>

namespace deepcov {

// Broad failure categories. The CLI prints the category as the first token of
// its single-line error so scripts can dispatch on it.
enum class ErrorKind {
  Parse,
  InvalidArgument,
  Io,
  Shape,
  Numerical,
  Format,
  Rejected,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Io: return "io";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Format: return "format";
    case ErrorKind::Rejected: return "rejected";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace deepcov
