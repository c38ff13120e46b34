#pragma once

#include <stdexcept>
#include <string>

namespace trukan {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or layer dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument value was violated.
class ValueError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf was produced while anomaly detection was on, or a loss diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input file or configuration.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace trukan
