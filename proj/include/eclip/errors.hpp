// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace eclip {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied an invalid value (index out of range, empty batch, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Configuration is inconsistent or names an unknown field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A serialized file has a bad magic, version or is truncated.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Backward pass reached an operation that has no gradient rule.
class UnsupportedOpError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite quantity.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& component, const std::string& what)
      : Error(what), component_(component) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

}  // namespace eclip
