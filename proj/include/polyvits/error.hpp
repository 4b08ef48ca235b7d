#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace polyvits {

enum class ErrorKind {
  kUnsupportedLanguage,
  kEmptyText,
  kBackendFailure,
  kEmptyCorpus,
  kExtractorUnavailable,
  kDimensionMismatch,
  kWordCountMismatch,
  kLengthMismatch,
  kInfeasible,
  kSizeLimit,
  kOutOfRange,
  kContextMismatch,
  kNonFinite,
  kIo,
  kSchema,
  kSampleRateMismatch,
  kEmptyDataset,
  kCoverage,
  kConfig,
  kConfigIncompatible,
  kMissingSpeakerData,
  kUnknownSpeaker,
  kLayout,
  kUsage,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUnsupportedLanguage: return "unsupported-language";
    case ErrorKind::kEmptyText: return "empty-text";
    case ErrorKind::kBackendFailure: return "backend-failure";
    case ErrorKind::kEmptyCorpus: return "empty-corpus";
    case ErrorKind::kExtractorUnavailable: return "extractor-unavailable";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kWordCountMismatch: return "word-count-mismatch";
    case ErrorKind::kLengthMismatch: return "length-mismatch";
    case ErrorKind::kInfeasible: return "infeasible";
    case ErrorKind::kSizeLimit: return "size-limit";
    case ErrorKind::kOutOfRange: return "out-of-range";
    case ErrorKind::kContextMismatch: return "context-mismatch";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kSampleRateMismatch: return "sample-rate-mismatch";
    case ErrorKind::kEmptyDataset: return "empty-dataset";
    case ErrorKind::kCoverage: return "coverage";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kConfigIncompatible: return "config-incompatible";
    case ErrorKind::kMissingSpeakerData: return "missing-speaker-data";
    case ErrorKind::kUnknownSpeaker: return "unknown-speaker";
    case ErrorKind::kLayout: return "layout";
    case ErrorKind::kUsage: return "usage";
  }
  return "unknown";
}

/// Every failure surfaced by the library carries a machine-readable kind so
/// the CLI can map it to an exit code and a JSON error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace polyvits
