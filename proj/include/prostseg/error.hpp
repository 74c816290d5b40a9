#pragma once

#include <stdexcept>
#include <string>

namespace prostseg {

// Error hierarchy. The CLI maps each category onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration: unknown keys, invalid values, unknown architecture tags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad or missing input data: unreadable files, schema violations, empty sets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor/feature-map shape violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Evaluation-stage failures: mismatched test sets, bad checkpoints.
class EvalError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible checkpoint container.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace prostseg
