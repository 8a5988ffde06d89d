#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnchain {

enum class ErrorCode {
  kNonSquare,
  kNegativeEntry,
  kRowSumViolation,
  kNonFinite,
  kSizeExceeded,
  kAlphaOutOfRange,
  kInvalidConfig,
  kInvalidDistribution,
  kDimensionMismatch,
  kOrientationMismatch,
  kConvergenceFailure,
  kEmptyHeadList,
  kNonPositiveMatrix,
  kIndexOutOfRange,
  kInvalidWeights,
  kAllTokensMasked,
  kMissingGrid,
  kMissingSpecialTokens,
  kGridMismatch,
  kParseError,
  kSchemaViolation,
  kMissingFile,
  kBadMagic,
  kUnsupportedVersion,
  kUnsupportedDtype,
  kFortranOrderUnsupported,
  kTruncatedData,
  kIoError,
  kInvalidArgument,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace attnchain
