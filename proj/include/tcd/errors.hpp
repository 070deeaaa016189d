// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tcd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or config-file content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset, embedding-file or checkpoint content that does not match expectations.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor shape or structural mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument to an operation (empty inputs, out-of-range labels, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity appeared where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tcd
