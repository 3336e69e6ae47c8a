#pragma once

#include <stdexcept>
#include <string>

namespace metaworld {

// Incompatible tensor shapes or malformed arguments to a primitive.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable dataset/checkpoint/config input.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values during training or optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace metaworld
