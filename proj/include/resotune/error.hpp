#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace resotune {

enum class ErrorCode {
  // jpeg-scan
  NotAJpeg,
  TruncatedHeader,
  MalformedMarker,
  ZeroScans,
  DecodeFailure,
  NotProgressive,
  // quality
  EmptyTarget,
  DimensionMismatch,
  InvalidCrop,
  // calibrate
  EmptyDataset,
  MissingThreshold,
  InvalidConfig,
  // pipeline / backends
  BackendFailure,
  EmptyScores,
  UnknownEntry,
  TooFewExamples,
  // autotune
  ShapeMismatch,
  InvalidSchedule,
  NoValidSchedule,
  // general
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code.
/// Decode failures additionally record the byte offset where decoding stopped.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(what), code_(code), offset_(offset) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> offset_;
};

}  // namespace resotune
