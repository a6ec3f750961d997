#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attrprompt {

enum class ErrorKind {
  kInvalidArgument,
  kDegenerateVector,
  kState,
  kNumericFailure,
  kUnsupported,
  kInsufficientAttributes,
  kInsufficientSamples,
  kCorruptDataset,
  kInvalidManifest,
  kConfig,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a machine-readable kind so the
// command-line tool can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace attrprompt
