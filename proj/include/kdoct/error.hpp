#pragma once

#include <stdexcept>
#include <string>

namespace kdoct {

// Error categories map 1:1 onto the CLI's machine-parsable failure lines.
enum class ErrorCategory { config, io, data, shape, format, train, internal };

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::format: return "format";
    case ErrorCategory::train: return "train";
    case ErrorCategory::internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) { throw Error(c, msg); }

}  // namespace kdoct
