#pragma once

#include <stdexcept>
#include <string>

namespace pairdiff {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/layer shape violations (carries a shape diagnostic in the message).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent configuration (unknown key, invalid value, impossible plan).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage input that an earlier stage should have produced.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

/// Numeric breakdown: NaN/Inf gradients, diverged loss, indefinite matrices.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized data (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pairdiff
