#pragma once

#include <stdexcept>
#include <string>

namespace sedkit {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kBadMagic,
  kUnknownVersion,
  kTruncated,
  kDuplicateName,
  kUnsupportedCodec,
  kEmptyAudio,
  kParse,
  kIo,
  kNonFinite,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kUnknownVersion: return "unknown version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kDuplicateName: return "duplicate name";
    case ErrorCode::kUnsupportedCodec: return "unsupported codec";
    case ErrorCode::kEmptyAudio: return "empty audio";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kNonFinite: return "non-finite value";
  }
  return "unknown error";
}

/// Single exception type for the toolkit; `code()` distinguishes failure classes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace sedkit
