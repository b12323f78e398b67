#pragma once

#include <stdexcept>
#include <string>

namespace circuitbench {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An upstream artifact a stage depends on is missing (CLI exit code 3).
class DependencyError : public Error {
 public:
  DependencyError(const std::string& what, std::string producer)
      : Error(what), producer_(std::move(producer)) {}

  /// Name of the subcommand that produces the missing artifact.
  const std::string& producer() const noexcept { return producer_; }

 private:
  std::string producer_;
};

/// NaN/Inf produced where finite values are required (CLI exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Shape or dimension mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or unexpected on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace circuitbench
