#pragma once

#include <stdexcept>
#include <string>

namespace psim {

/// Base of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violated a documented precondition or type invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite or degenerate value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or format problem while reading/writing an artifact.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace psim
