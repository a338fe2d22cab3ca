// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tspt {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch or argument outside an operation's domain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, manifests, inventories).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected, or a training run diverged.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unsupported option combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tspt
