#pragma once

#include <stdexcept>
#include <string>

namespace qag {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree (messages carry both shapes).
struct ShapeError : Error {
  using Error::Error;
};

// An index (token id, axis, ...) is out of range.
struct IndexError : Error {
  using Error::Error;
};

// NaN/Inf produced in a forward pass.
struct NumericError : Error {
  using Error::Error;
};

// An API contract was violated (e.g. backward on a non-scalar).
struct ContractError : Error {
  using Error::Error;
};

// Bad run configuration (beam < 1, m < 1, empty corpus selection, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Invalid input data (malformed records, missing fields, id mismatches).
struct ValidationError : Error {
  using Error::Error;
};

// Filesystem / IO failure; message names the path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace qag
