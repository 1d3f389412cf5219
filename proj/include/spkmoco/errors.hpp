#pragma once

#include <stdexcept>
#include <string>

namespace spkmoco {

// Shape or dimension disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Hyperparameter or argument outside its valid range.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke a documented precondition (non-scalar loss, unnormalized rows...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// NaN/Inf produced during training.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or unsupported file content.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input data unusable (too short, missing ids, degenerate statistics).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace spkmoco
