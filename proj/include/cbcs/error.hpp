#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cbcs {

enum class ErrorCode {
  // file formats
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  NonFiniteValue,
  OutOfRangeLabel,
  IoFailure,
  ParseError,
  // shapes and contracts
  DimensionMismatch,
  NotNormalized,
  InvalidArgument,
  // bottleneck
  InvalidK,
  EmptyCatalog,
  MissingConceptEmbedding,
  // scorer
  EmptyDataset,
  EmptyTrajectory,
  NonFiniteLoss,
  // sampler
  InvalidSpec,
  BudgetExceedsPool,
  UnknownConfig,
  // bench
  EmptyCoreset,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::OutOfRangeLabel: return "OutOfRangeLabel";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::EmptyCatalog: return "EmptyCatalog";
    case ErrorCode::MissingConceptEmbedding: return "MissingConceptEmbedding";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::BudgetExceedsPool: return "BudgetExceedsPool";
    case ErrorCode::UnknownConfig: return "UnknownConfig";
    case ErrorCode::EmptyCoreset: return "EmptyCoreset";
  }
  return "Unknown";
}

/// Coarse failure class used for process exit codes.
enum class ErrorCategory { Config = 1, Io = 2, Numerical = 3 };

constexpr ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic:
    case ErrorCode::VersionMismatch:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::IoFailure:
    case ErrorCode::ParseError:
    case ErrorCode::OutOfRangeLabel:
    case ErrorCode::MissingConceptEmbedding:
      return ErrorCategory::Io;
    case ErrorCode::NonFiniteValue:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NotNormalized:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Config;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace cbcs
