// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace condepth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (shapes, hyperparameters, names).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad external input: token ids out of range, short corpus files, I/O.
class InputError : public Error {
 public:
  using Error::Error;
};

/// API misuse by the caller (e.g. backward from a non-scalar node).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Broken internal contract; indicates a bug rather than bad input.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace condepth
