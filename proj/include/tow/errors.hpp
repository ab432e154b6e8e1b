#pragma once

#include <stdexcept>
#include <string>

namespace tow {

// Configuration / experiment setup problems. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Bad arguments to a library call (dimension mismatches, out-of-range values).
// Also mapped to exit code 1 by the CLI.
class ArgumentError : public std::invalid_argument {
 public:
  explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

// Operation not defined for the requested variant, e.g. an exact Hessian of a
// nonlinear network.
class UnsupportedError : public std::logic_error {
 public:
  explicit UnsupportedError(const std::string& what) : std::logic_error(what) {}
};

// Non-finite values or failed factorizations. The CLI maps this to exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tow
