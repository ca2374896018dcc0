// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace helmlm {

enum class ErrorCode {
  // helm_notation
  SyntaxError,
  DanglingConnection,
  DuplicatePolymerId,
  DuplicateConnection,
  // tokenizer
  MarkerCollision,
  UndecodableToken,
  // corpus_pipeline
  MissingLabel,
  DuplicatePair,
  MissingClusterLabel,
  SequenceTooLong,
  // tensor_core / encoder
  ShapeMismatch,
  NumericOverflow,
  PositionOverflow,
  EmptySequence,
  // training
  NonFiniteGradient,
  MissingProteinVector,
  CheckpointError,
  // evaluation / statistics
  ZeroVariance,
  SingleClass,
  InsufficientData,
  // shared
  InvalidArgument,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::DanglingConnection: return "DanglingConnection";
    case ErrorCode::DuplicatePolymerId: return "DuplicatePolymerId";
    case ErrorCode::DuplicateConnection: return "DuplicateConnection";
    case ErrorCode::MarkerCollision: return "MarkerCollision";
    case ErrorCode::UndecodableToken: return "UndecodableToken";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::DuplicatePair: return "DuplicatePair";
    case ErrorCode::MissingClusterLabel: return "MissingClusterLabel";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NumericOverflow: return "NumericOverflow";
    case ErrorCode::PositionOverflow: return "PositionOverflow";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::MissingProteinVector: return "MissingProteinVector";
    case ErrorCode::CheckpointError: return "CheckpointError";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every domain failure in the library surfaces as this type. The message is
/// prefixed with the error name so CLI diagnostics stay one line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Numeric failures map to a distinct CLI exit status.
  bool is_numeric() const noexcept {
    return code_ == ErrorCode::NumericOverflow ||
           code_ == ErrorCode::NonFiniteGradient;
  }

 private:
  ErrorCode code_;
};

}  // namespace helmlm
