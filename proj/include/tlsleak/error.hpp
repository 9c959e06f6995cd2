#pragma once

#include <stdexcept>
#include <string>

namespace tlsleak {

/// Broad failure classes; the CLI maps each to its own exit code.
enum class ErrorKind {
  kInvalidArgument,
  kNotFound,
  kIo,
  kFormat,
  kUnsupported,
  kCorrupt,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error invalid_argument(const std::string& message) {
  return Error(ErrorKind::kInvalidArgument, message);
}

inline Error format_error(const std::string& message) {
  return Error(ErrorKind::kFormat, message);
}

}  // namespace tlsleak
