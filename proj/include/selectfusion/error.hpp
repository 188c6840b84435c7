#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace selectfusion {

enum class ErrorCode {
  ShapeMismatch,
  NonFinite,
  NotScalar,
  NotOnTape,
  EmptyWindow,
  MissingGradient,
  NonPositiveTemperature,
  EpochOutOfRange,
  ZeroQuaternion,
  EmptyAccumulator,
  TrajectoryTooShort,
  OriginPoint,
  BadProfile,
  MaxDegOutOfRange,
  ShiftTooLarge,
  InvalidConfig,
  DatasetMissing,
  DivergedLoss,
  DimensionMismatch,
  JoinMismatch,
  MissingArtifacts,
  BadFormat,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can dispatch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace selectfusion
