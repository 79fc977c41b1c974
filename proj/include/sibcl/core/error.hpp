#pragma once

#include <stdexcept>
#include <string>

namespace sibcl {

// Base of all library errors. Each family maps onto a CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

// Bad arguments, shape mismatches, inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// Non-convergence, non-finite values, degenerate geometry.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

// Corrupted or truncated files.
class IntegrityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace sibcl
