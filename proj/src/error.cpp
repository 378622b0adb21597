#include "gema/error.hpp"

namespace gema {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::EmptyAfterFiltering: return "EmptyAfterFiltering";
    case ErrorCode::NegativeValue: return "NegativeValue";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::CholeskyFailure: return "CholeskyFailure";
    case ErrorCode::BadFractions: return "BadFractions";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::StaleTrace: return "StaleTrace";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::CodeOutOfRange: return "CodeOutOfRange";
    case ErrorCode::UnfittedModel: return "UnfittedModel";
    case ErrorCode::NonPositiveRate: return "NonPositiveRate";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::DegenerateRanks: return "DegenerateRanks";
    case ErrorCode::MalformedResultFile: return "MalformedResultFile";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace gema
