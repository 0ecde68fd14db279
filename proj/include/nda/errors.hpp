#pragma once

#include <stdexcept>
#include <string>

namespace nda {

/// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not line up (message names both shapes).
struct ShapeError : Error {
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (log of non-positive, ...).
struct DomainError : Error {
  using Error::Error;
};

/// A caller broke a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

/// A computation produced NaN/Inf or an otherwise unusable numeric result.
struct NumericError : Error {
  using Error::Error;
};

/// Malformed text input (config, CSV, checkpoint); message carries the line number.
struct ParseError : Error {
  using Error::Error;
};

/// An iterative solver ran out of iterations; message carries the residual.
struct ConvergenceError : Error {
  using Error::Error;
};

}  // namespace nda
