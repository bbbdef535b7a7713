#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "zestdiff/tensor.hpp"

namespace zestdiff {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;
  bool finite = true;
  std::string message;  // set when a non-finite value was produced

  bool ok(double tol) const { return finite && max_rel_err <= tol; }
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `eps`. The relative error per coordinate is
/// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8); the maximum is returned.
GradCheckResult grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double eps = 1e-5);

}  // namespace zestdiff
