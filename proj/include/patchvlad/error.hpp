#pragma once

#include <stdexcept>
#include <string>

namespace patchvlad {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kOutOfBounds,
  kDegenerate,
  kIo,
  kBadMagic,
  kTruncated,
  kUnsupportedDtype,
  kParse,
  kNotFound,
  kInvalidModel,
};

const char* error_code_name(ErrorCode code) noexcept;

// Every failure raised by the core carries a code so the C boundary can map
// it to a status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace patchvlad
