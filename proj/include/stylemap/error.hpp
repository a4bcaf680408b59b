#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stylemap {

enum class ErrorCode {
  ShapeMismatch,
  InvalidShape,
  ConstantVolume,
  NotNormalized,
  AlreadyNormalized,
  EmptyInput,
  DuplicateGroup,
  InvalidK,
  IoFailure,
  FormatError,
  SingleDomainDataset,
  NoWeights,
  InvalidRange,
  OutOfRangeT,
  CondKindMismatch,
  EmptyPool,
  NTooLarge,
  UnpairedData,
  UnknownLabel,
  PairingUnavailable,
  DirectionMismatch,
  ConstantInput,
  EmptySet,
  InsufficientTestData,
  DomainSetMismatch,
  ConfigInvalid,
  UnknownDomain,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::ConstantVolume: return "ConstantVolume";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::AlreadyNormalized: return "AlreadyNormalized";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DuplicateGroup: return "DuplicateGroup";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::SingleDomainDataset: return "SingleDomainDataset";
    case ErrorCode::NoWeights: return "NoWeights";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::OutOfRangeT: return "OutOfRangeT";
    case ErrorCode::CondKindMismatch: return "CondKindMismatch";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::NTooLarge: return "NTooLarge";
    case ErrorCode::UnpairedData: return "UnpairedData";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::PairingUnavailable: return "PairingUnavailable";
    case ErrorCode::DirectionMismatch: return "DirectionMismatch";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::InsufficientTestData: return "InsufficientTestData";
    case ErrorCode::DomainSetMismatch: return "DomainSetMismatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::UnknownDomain: return "UnknownDomain";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above, so
/// callers (and the CLI) can branch on the category and still print a
/// human-readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace stylemap
