#pragma once

#include <stdexcept>
#include <string>

namespace hrformer {

// Tensor extents do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid model, stage or operator configuration (including parse errors).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or a failed numerical check.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Broken internal invariant (corrupted metadata and the like).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace hrformer
