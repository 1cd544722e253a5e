#pragma once

#include <stdexcept>
#include <string>

namespace prescient {

enum class ErrorCode {
  kInvalidArgument = 1,
  kMalformedInput,
  kUnderdeterminedFit,
  kInsufficientDemonstrations,
  kSingularConditioning,
  kConfiguration,
  kMapping,
  kDegenerateSupport,
  kInfeasible,
  kParse,
  kIo,
  kAlignment,
  kModel,
  kInternal,
};

const char* to_string(ErrorCode code);

/// Exception carried through the C++ core. The C API maps `code()` onto
/// `prs_status` values one-to-one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace prescient
