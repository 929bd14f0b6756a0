#pragma once

#include <stdexcept>
#include <string>

namespace duple {

/// Base of all errors raised by the library. Each subclass maps onto one
/// process exit code in the command-line tool.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed input data.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or dataset bundle inconsistent with itself or with each other.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or failed factorizations.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace duple
