#pragma once

#include <stdexcept>
#include <string>

namespace ot3d {

enum class ErrorCode {
  invalid_argument,
  out_of_range,
  dimension_mismatch,
  empty_input,
  unusable_view,
  duplicate_category,
  unknown_category,
  not_ready,
  io_error,
  format_error,
  not_found,
  stale_reference,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::unusable_view: return "unusable_view";
    case ErrorCode::duplicate_category: return "duplicate_category";
    case ErrorCode::unknown_category: return "unknown_category";
    case ErrorCode::not_ready: return "not_ready";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::format_error: return "format_error";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::stale_reference: return "stale_reference";
  }
  return "unknown";
}

/// Single exception type for the library; the code survives across the service
/// boundary as the `code` field of error bodies.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace ot3d
