#pragma once

#include <stdexcept>
#include <string>

namespace shapdistill {

// Base class for every error raised by the library. Subclasses map onto the
// CLI exit codes (see tools/shapdistill.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or unknown configuration (environment names, config keys, ranges).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation precondition (dimension mismatch, empty input).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, diverging training, degenerate numerics.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Hyperplane regression on rank-deficient input.
class DegenerateFitError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Filesystem or parse failures; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage was run before the stage that produces its input.
class StageOrderError : public Error {
 public:
  using Error::Error;
};

// Failures talking to an external policy process.
class BridgeError : public Error {
 public:
  using Error::Error;
};

class BridgeTimeoutError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

class BridgeProtocolError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

}  // namespace shapdistill
