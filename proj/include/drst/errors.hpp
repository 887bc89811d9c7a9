#pragma once

#include <stdexcept>
#include <string>

namespace drst {

// Shape/rank mismatches and invalid geometry.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad hyperparameters, config values, unknown keys.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Filesystem and stream failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace drst
