#pragma once

#include <stdexcept>
#include <string>

namespace stochnull {

/// Raised for invalid user input: shapes, intervals, coefficients, config.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces non-finite values or a solve breaks down.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace internal {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace internal
}  // namespace stochnull
