#pragma once

#include <stdexcept>
#include <string>

namespace cuspma {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point or argument lies outside the domain where an operation is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)), reason_(what) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string field_;
  std::string reason_;
};

/// An operation was called with arguments that violate its stated preconditions.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// An iterative method failed to reach its tolerance.
class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace cuspma
