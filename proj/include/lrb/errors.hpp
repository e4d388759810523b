#pragma once

#include <stdexcept>
#include <string>

namespace lrb {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/vector dimension mismatch; message names the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration or hyperparameter; maps to CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or insufficient data (files, shards, labels).
struct DataError : Error {
  using Error::Error;
};

// Non-finite value produced by a numeric routine; maps to CLI exit code 3.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace lrb
