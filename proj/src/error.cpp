#include "attnchain/error.hpp"

namespace attnchain {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonSquare: return "NonSquare";
    case ErrorCode::kNegativeEntry: return "NegativeEntry";
    case ErrorCode::kRowSumViolation: return "RowSumViolation";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kSizeExceeded: return "SizeExceeded";
    case ErrorCode::kAlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvalidDistribution: return "InvalidDistribution";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kOrientationMismatch: return "OrientationMismatch";
    case ErrorCode::kConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::kEmptyHeadList: return "EmptyHeadList";
    case ErrorCode::kNonPositiveMatrix: return "NonPositiveMatrix";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kInvalidWeights: return "InvalidWeights";
    case ErrorCode::kAllTokensMasked: return "AllTokensMasked";
    case ErrorCode::kMissingGrid: return "MissingGrid";
    case ErrorCode::kMissingSpecialTokens: return "MissingSpecialTokens";
    case ErrorCode::kGridMismatch: return "GridMismatch";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kSchemaViolation: return "SchemaViolation";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kUnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::kFortranOrderUnsupported: return "FortranOrderUnsupported";
    case ErrorCode::kTruncatedData: return "TruncatedData";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace attnchain
