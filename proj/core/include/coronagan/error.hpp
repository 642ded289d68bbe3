#pragma once

#include <stdexcept>
#include <string>

namespace coronagan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts that do not match a network or loss contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration or spec record that violates its invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File system or decode failures. The message always names the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A loss term became NaN or infinite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace coronagan
