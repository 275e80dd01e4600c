#include "resotune/error.hpp"

namespace resotune {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotAJpeg: return "NotAJpeg";
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::MalformedMarker: return "MalformedMarker";
    case ErrorCode::ZeroScans: return "ZeroScans";
    case ErrorCode::DecodeFailure: return "DecodeFailure";
    case ErrorCode::NotProgressive: return "NotProgressive";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidCrop: return "InvalidCrop";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::MissingThreshold: return "MissingThreshold";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::UnknownEntry: return "UnknownEntry";
    case ErrorCode::TooFewExamples: return "TooFewExamples";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidSchedule: return "InvalidSchedule";
    case ErrorCode::NoValidSchedule: return "NoValidSchedule";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace resotune
