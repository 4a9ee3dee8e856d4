// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crowngen {

enum class ErrorCode {
  OutOfBounds,
  EmptyVolume,
  NoSurface,
  TooFewPoints,
  NormalsMissing,
  PointOutsideGrid,
  ShapeMismatch,
  EmptyCloud,
  WeightLengthMismatch,
  UnknownLabel,
  NonFiniteLoss,
  InvalidArgument,
  Io,
  Config,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. `stage` names the pipeline step that raised it
/// (empty for direct module calls).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string stage = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

  /// Same error re-tagged with a pipeline stage.
  Error with_stage(std::string stage) const;

 private:
  ErrorCode code_;
  std::string stage_;
  std::string detail_;
};

/// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
int exit_code_for(ErrorCode code);

}  // namespace crowngen
