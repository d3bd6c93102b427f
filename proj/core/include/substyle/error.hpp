#pragma once

#include <stdexcept>
#include <string>

namespace substyle {

// Coarse failure classes; the CLI maps them onto process exit codes.
enum class ErrorKind {
  kIo,       // unreadable/unwritable files
  kFormat,   // malformed weight, model or image files
  kConfig,   // invalid arguments or inconsistent configuration
  kNumeric,  // degenerate numerical input
};

// Fine-grained codes for conditions callers and tests need to tell apart.
enum class ErrorCode {
  kGeneric,
  kNoSamples,
  kAsymmetric,
  kDegenerateMean,
  kBadMagic,
  kBadVersion,
  kBadChecksum,
  kUnexpectedEof,
  kUnknownLayerKind,
  kShapeMismatch,
  kLevelOutOfRange,
  kLevelMismatch,
  kRankExceeded,
  kTooFewPoints,
  kDegenerateMixture,
  kLengthMismatch,
  kMissingNetwork,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, ErrorCode code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(code) {}

  ErrorKind kind() const noexcept { return kind_; }
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorKind kind, ErrorCode code,
                              const std::string& message) {
  throw Error(kind, code, message);
}

}  // namespace substyle
