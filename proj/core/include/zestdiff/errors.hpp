#pragma once

#include <stdexcept>

namespace zestdiff {

/// Non-finite values where finite ones are required (losses, gradients,
/// samples). Distinct from invalid input, which uses std::invalid_argument.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zestdiff
