#pragma once

#include <string>
#include <vector>

#include "zestdiff/tensor.hpp"

namespace zestdiff {

enum class ScheduleKind { linear_beta, cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string schedule_kind_name(ScheduleKind kind);

/// Cumulative signal coefficients alpha[t], t = 0..T. alpha[0] == 1 and
/// alpha decreases strictly towards ~0 at t = T.
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::linear_beta;
  std::vector<double> alpha;
  std::vector<double> sqrt_alpha;
  std::vector<double> sqrt_one_minus_alpha;

  double at(int t) const;
};

/// linear_beta: beta linearly spaced 1e-4 -> 2e-2 over t = 1..T (endpoints
/// scaled by 1000/T, betas capped at 0.999).
/// cosine: squared-cosine cumulative schedule with offset 0.008, betas capped at 0.999.
NoiseSchedule make_schedule(int T, ScheduleKind kind);

/// sqrt(alpha_t) * x0 + sqrt(1 - alpha_t) * eps.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule);

}  // namespace zestdiff
