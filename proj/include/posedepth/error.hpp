#pragma once

#include <stdexcept>
#include <string>

namespace posedepth {

enum class ErrorCode {
  ShapeMismatch,
  DomainError,
  InvalidAxis,
  NonIntegralOutputSize,
  NonScalarLoss,
  TapeConsumed,
  TapeMismatch,
  NonPositiveDepth,
  EmptySourceList,
  NonFiniteLoss,
  EmptyMask,
  NonPositivePrediction,
  EmptyEvaluationMask,
  DegenerateGeometry,
  IndexOutOfRange,
  IoError,
  MalformedHeader,
  ConfigParseError,
  ManifestMismatch,
  MissingGroundTruth,
  InvalidArgument,
};

const char* to_string(ErrorCode code) noexcept;

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace posedepth
