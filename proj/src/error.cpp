// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/error.hpp"

namespace crowngen {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::EmptyVolume: return "EmptyVolume";
    case ErrorCode::NoSurface: return "NoSurface";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NormalsMissing: return "NormalsMissing";
    case ErrorCode::PointOutsideGrid: return "PointOutsideGrid";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::WeightLengthMismatch: return "WeightLengthMismatch";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

namespace {
std::string compose(ErrorCode code, const std::string& message,
                    const std::string& stage) {
  std::string out;
  if (!stage.empty()) out += "[" + stage + "] ";
  out += std::string(to_string(code)) + ": " + message;
  return out;
}
}  // namespace

Error::Error(ErrorCode code, const std::string& message, std::string stage)
    : std::runtime_error(compose(code, message, stage)),
      code_(code),
      stage_(std::move(stage)),
      detail_(message) {}

Error Error::with_stage(std::string stage) const {
  return Error(code_, detail_, std::move(stage));
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownLabel:
      return 2;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NoSurface:
      return 4;
    default:
      return 3;
  }
}

}  // namespace crowngen
