#pragma once

#include <stdexcept>
#include <string>

namespace eyedex {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or layer geometry do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument or configuration value is out of its allowed range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File system, decode, or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Image could not be decoded.
class DecodeError : public IoError {
 public:
  using IoError::IoError;
};

/// Checkpoint container is corrupt or does not match the target model.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

/// Autograd misuse: backward before forward, non-scalar seed, foreign handles.
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace eyedex
