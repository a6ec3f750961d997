#include "attrprompt/error.hpp"

namespace attrprompt {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kDegenerateVector: return "degenerate_vector";
    case ErrorKind::kState: return "state";
    case ErrorKind::kNumericFailure: return "numeric_failure";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kInsufficientAttributes: return "insufficient_attributes";
    case ErrorKind::kInsufficientSamples: return "insufficient_samples";
    case ErrorKind::kCorruptDataset: return "corrupt_dataset";
    case ErrorKind::kInvalidManifest: return "invalid_manifest";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace attrprompt
