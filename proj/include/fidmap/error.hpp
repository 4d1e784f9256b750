#pragma once

#include <stdexcept>
#include <string>

namespace fidmap {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateObservation,
  kProjection,
  kParse,
  kConfig,
  kNotLocalizable,
  kDegenerateCycle,
  kRankDeficient,
  kInvalidInitialization,
  kNumericalFailure,
  kNoOverlap,
  kDegenerateCorrespondences,
  kTooManyMarkers,
  kUnusableSequence,
  kInsufficientCoObservations,
  kIo,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (notably the CLI) can map it to a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDegenerateObservation: return "degenerate-observation";
    case ErrorCode::kProjection: return "projection-error";
    case ErrorCode::kParse: return "parse-error";
    case ErrorCode::kConfig: return "config-error";
    case ErrorCode::kNotLocalizable: return "not-localizable";
    case ErrorCode::kDegenerateCycle: return "degenerate-cycle";
    case ErrorCode::kRankDeficient: return "rank-deficiency";
    case ErrorCode::kInvalidInitialization: return "invalid-initialization";
    case ErrorCode::kNumericalFailure: return "numerical-failure";
    case ErrorCode::kNoOverlap: return "no-overlap";
    case ErrorCode::kDegenerateCorrespondences: return "degenerate-correspondences";
    case ErrorCode::kTooManyMarkers: return "too-many-markers";
    case ErrorCode::kUnusableSequence: return "unusable-sequence";
    case ErrorCode::kInsufficientCoObservations: return "insufficient co-observations";
    case ErrorCode::kIo: return "io-error";
  }
  return "unknown";
}

}  // namespace fidmap
