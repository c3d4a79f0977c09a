#pragma once

#include <stdexcept>
#include <string>

namespace fmiseg {

/// Inconsistent configuration: bad hyperparameters, mismatched shapes, unknown keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined by an op.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Missing or malformed input data (images, masks, captions, archives).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value was produced or consumed; the message names the op.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fmiseg
