// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dst {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index (word id, class id, row) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or arguments (maps to the CLI usage exit code).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required input file is missing or unreadable.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// An input file exists but its contents are malformed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint is truncated or fails its checksum.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

}  // namespace dst
