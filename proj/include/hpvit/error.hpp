#pragma once

#include <stdexcept>
#include <string>

namespace hpvit {

// Incompatible shapes, bad axes, or out-of-range labels.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration or user input. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A checkpoint or cached artifact failed its integrity check.
class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

// Misuse of the autodiff graph (stale graph, non-scalar loss).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace hpvit
