/**
 * Copyright 2026 The crqat Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef CRQAT_ERRORS_HPP_
#define CRQAT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace crqat {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents. The message names the offending axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (labels out of range and similar).
class InputError : public Error {
 public:
  using Error::Error;
};

/// API misuse: backward on a non-scalar, an empty observer, a short trace.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// QuantSpec invariant violated.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Model state is not in the state an operation requires.
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File system and format errors.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint blob does not match its recorded checksum.
class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace crqat

#endif  // CRQAT_ERRORS_HPP_
