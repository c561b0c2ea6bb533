#pragma once

#include <stdexcept>
#include <string>

namespace xview {

// Base of every error the library raises. Each subclass maps to one failure
// family so callers (the CLI in particular) can translate them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A scalar parameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// An operation was invoked in the wrong state (e.g. reverse pass before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Input data is malformed, missing or out of range.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A training stage was requested without its prerequisites.
class StageError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller-supplied callable violates its contract (e.g. non-deterministic).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace xview
