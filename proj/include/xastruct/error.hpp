#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xastruct {

enum class ErrorCode {
  kInvalidStructure,
  kNoNeighbors,
  kOutOfRange,
  kFlatSpectrum,
  kInsufficientData,
  kBelowEdge,
  kShape,
  kRank,
  kLabel,
  kScope,
  kEmptyEnvironment,
  kGridMismatch,
  kTaskMismatch,
  kInvalidGraph,
  kLengthMismatch,
  kEmptyInput,
  kParse,
  kIo,
  kUsage,
};

std::string_view ErrorCodeName(ErrorCode code);

/// Single exception type for the toolkit; `code()` distinguishes failure kinds.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidStructure: return "invalid-structure";
    case ErrorCode::kNoNeighbors: return "no-neighbors";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kFlatSpectrum: return "flat-spectrum";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kBelowEdge: return "below-edge";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kRank: return "rank";
    case ErrorCode::kLabel: return "label";
    case ErrorCode::kScope: return "scope";
    case ErrorCode::kEmptyEnvironment: return "empty-environment";
    case ErrorCode::kGridMismatch: return "grid-mismatch";
    case ErrorCode::kTaskMismatch: return "task-mismatch";
    case ErrorCode::kInvalidGraph: return "invalid-graph";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kUsage: return "usage";
  }
  return "unknown";
}

}  // namespace xastruct
