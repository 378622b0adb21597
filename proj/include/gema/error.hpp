#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gema {

enum class ErrorCode {
  MissingColumn,
  NonNumericCell,
  EmptyAfterFiltering,
  NegativeValue,
  UnknownColumn,
  CholeskyFailure,
  BadFractions,
  DimensionMismatch,
  StaleTrace,
  ZeroMatrix,
  CodeOutOfRange,
  UnfittedModel,
  NonPositiveRate,
  NonFiniteLoss,
  EmptySplit,
  SchemaMismatch,
  EmptyInput,
  LengthMismatch,
  NonPositiveScale,
  DegenerateVariance,
  RankDeficientDesign,
  TooFewRows,
  TooFewPoints,
  SingularCovariance,
  DegenerateRanks,
  MalformedResultFile,
  InvalidArgument,
  Io,
  Internal,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gema
