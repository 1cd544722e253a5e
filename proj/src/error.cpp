#include "prescient/error.hpp"

namespace prescient {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kMalformedInput: return "malformed input";
    case ErrorCode::kUnderdeterminedFit: return "underdetermined fit";
    case ErrorCode::kInsufficientDemonstrations: return "insufficient demonstrations";
    case ErrorCode::kSingularConditioning: return "singular conditioning";
    case ErrorCode::kConfiguration: return "configuration error";
    case ErrorCode::kMapping: return "mapping error";
    case ErrorCode::kDegenerateSupport: return "degenerate support";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kAlignment: return "alignment error";
    case ErrorCode::kModel: return "model error";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown error";
}

}  // namespace prescient
