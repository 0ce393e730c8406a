#pragma once

#include <stdexcept>
#include <string>

namespace cpl {

/// Base class for every error raised by the library. `exit_code()` is the
/// process status the command-line tool reports for it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration, arguments, or preconditions on user-supplied values.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Shape mismatches, non-finite values, or misuse of the gradient tape.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Filesystem failures and malformed or incompatible files.
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace cpl
