#pragma once

#include <stdexcept>
#include <string>

namespace sepprune {

// Bad shapes, bad hyperparameters, malformed requests.
class InvalidArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A forward or backward pass produced NaN/Inf. Carries the op name.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& op, const std::string& what)
      : std::runtime_error("numeric failure in '" + op + "': " + what), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

// Checkpoint decode failures, one class per condition so callers can
// distinguish them.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// WAV decode failures.
class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class WavHeaderError : public WavError {
 public:
  using WavError::WavError;
};
class WavEncodingError : public WavError {
 public:
  using WavError::WavError;
};
class WavChannelError : public WavError {
 public:
  using WavError::WavError;
};

// CLI / run configuration problems (maps to exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sepprune
