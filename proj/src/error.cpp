#include "selectfusion/error.hpp"

namespace selectfusion {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::NotOnTape: return "NotOnTape";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorCode::ZeroQuaternion: return "ZeroQuaternion";
    case ErrorCode::EmptyAccumulator: return "EmptyAccumulator";
    case ErrorCode::TrajectoryTooShort: return "TrajectoryTooShort";
    case ErrorCode::OriginPoint: return "OriginPoint";
    case ErrorCode::BadProfile: return "BadProfile";
    case ErrorCode::MaxDegOutOfRange: return "MaxDegOutOfRange";
    case ErrorCode::ShiftTooLarge: return "ShiftTooLarge";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DatasetMissing: return "DatasetMissing";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::JoinMismatch: return "JoinMismatch";
    case ErrorCode::MissingArtifacts: return "MissingArtifacts";
    case ErrorCode::BadFormat: return "BadFormat";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace selectfusion
