/*
 * Copyright 2026 The stitchkit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stitch {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input that makes an operation undefined, e.g. a zero-norm row.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Index or step outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (non-positive temperature, k == 0, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk file. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// A file whose magic identifies a format revision this build cannot read.
class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Rank correlation undefined because one side has zero rank variance.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

/// The pair-advisor reply could not be mapped to a zoo pair.
class AdvisorParseError : public Error {
 public:
  using Error::Error;
};

/// The pair-advisor transport failed.
class AdvisorUnavailableError : public Error {
 public:
  using Error::Error;
};

}  // namespace stitch
