#pragma once

#include <stdexcept>
#include <string>

namespace crfp {

// Error taxonomy shared by the whole pipeline. The CLI maps ConfigError and
// UsageError to exit code 2, everything else that throws to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad shapes, bad config keys/values, dims that violate
// an operator precondition.
struct ConfigError : Error {
  using Error::Error;
};

// Caller misuse of a command or API (flag combinations, trace/clip mismatch).
struct UsageError : Error {
  using Error::Error;
};

// Bad input data: undecodable frames, malformed checkpoints, mixed dims.
struct DataError : Error {
  using Error::Error;
};

// Filesystem-level failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace crfp
