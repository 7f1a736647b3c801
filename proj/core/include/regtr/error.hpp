#pragma once

#include <stdexcept>
#include <string>

namespace regtr {

/// Bad arguments: shape mismatches, out-of-range parameters, malformed input.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure: NaN/Inf propagation, degenerate solver input.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-format or filesystem failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace regtr
