// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace thermobnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or lengths do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (group counts, topology, hyper-parameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file content.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace thermobnn
