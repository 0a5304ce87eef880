#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace knnkb {

enum class ErrorCode : std::uint8_t {
  kInvalidArgument,
  kNotFound,
  kIoError,
  kParseError,
  kUnknownVersion,
  kCorruption,
  kReadOnly,
  kEncoderUnconfigured,
  kEncoderFailure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:     return "invalid-argument";
    case ErrorCode::kNotFound:            return "not-found";
    case ErrorCode::kIoError:             return "io-error";
    case ErrorCode::kParseError:          return "parse-error";
    case ErrorCode::kUnknownVersion:      return "unknown-version";
    case ErrorCode::kCorruption:          return "corruption-error";
    case ErrorCode::kReadOnly:            return "read-only";
    case ErrorCode::kEncoderUnconfigured: return "encoder-unconfigured";
    case ErrorCode::kEncoderFailure:      return "encoder-failure";
  }
  return "unknown";
}

/// Every failure surfaced by the library carries one of the codes above so the
/// CLI and the HTTP layer can map it without string matching.
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

}  // namespace knnkb
