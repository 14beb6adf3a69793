#pragma once

#include <stdexcept>
#include <string>

namespace nncomp {

// Error categories map onto CLI exit codes: config = 2, data = 3, numeric = 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid model/experiment configuration: bad layer sizes, unreachable
// compression rates, incompatible compression steps.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or corrupt input data: dataset/model file parse failures.
struct DataError : Error {
  using Error::Error;
};

// Tensor shape mismatch detected at graph construction or forward time.
struct ShapeError : ConfigError {
  using ConfigError::ConfigError;
};

// Operation called in the wrong order (e.g. backward before forward).
struct StateError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required (diverged training).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace nncomp
