#include "zestdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "zestdiff/ops.hpp"

namespace zestdiff {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear-beta" || name == "linear_beta" || name == "linear") return ScheduleKind::linear_beta;
  if (name == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown noise schedule kind '" + name + "' (expected linear-beta or cosine)");
}

std::string schedule_kind_name(ScheduleKind kind) {
  return kind == ScheduleKind::linear_beta ? "linear-beta" : "cosine";
}

double NoiseSchedule::at(int t) const {
  if (t < 0 || t > T) throw std::out_of_range("noise schedule: t=" + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  return alpha[static_cast<size_t>(t)];
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
  if (T < 10) throw std::invalid_argument("make_schedule: T_train must be >= 10, got " + std::to_string(T));
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.alpha.resize(static_cast<size_t>(T) + 1);
  s.alpha[0] = 1.0;
  if (kind == ScheduleKind::linear_beta) {
    // Endpoints scale with 1000 / T so short schedules still end near pure noise.
    const double scale = 1000.0 / static_cast<double>(T);
    const double b0 = 1e-4 * scale, b1 = 2e-2 * scale;
    for (int t = 1; t <= T; ++t) {
      const double beta =
          std::min(b0 + (b1 - b0) * static_cast<double>(t - 1) / static_cast<double>(T - 1), 0.999);
      s.alpha[t] = s.alpha[t - 1] * (1.0 - beta);
    }
  } else {
    auto f = [T](int t) {
      const double x = (static_cast<double>(t) / T + 0.008) / 1.008;
      const double c = std::cos(x * std::numbers::pi / 2.0);
      return c * c;
    };
    const double f0 = f(0);
    for (int t = 1; t <= T; ++t) {
      const double beta = std::min(1.0 - (f(t) / f0) / (f(t - 1) / f0), 0.999);
      s.alpha[t] = s.alpha[t - 1] * (1.0 - beta);
    }
  }
  s.sqrt_alpha.resize(s.alpha.size());
  s.sqrt_one_minus_alpha.resize(s.alpha.size());
  for (size_t t = 0; t < s.alpha.size(); ++t) {
    s.sqrt_alpha[t] = std::sqrt(s.alpha[t]);
    s.sqrt_one_minus_alpha[t] = std::sqrt(1.0 - s.alpha[t]);
  }
  return s;
}

template <typename T>
Tensor<T> add_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.T) {
    throw std::out_of_range("add_noise: t=" + std::to_string(t) + " outside [0, " + std::to_string(schedule.T) + "]");
  }
  if (x0.shape() != eps.shape()) {
    throw std::invalid_argument("add_noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  if (t == 0) return x0;
  return add(mul_scalar(x0, schedule.sqrt_alpha[t]), mul_scalar(eps, schedule.sqrt_one_minus_alpha[t]));
}

template Tensor<float> add_noise(const Tensor<float>&, int, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> add_noise(const Tensor<double>&, int, const Tensor<double>&, const NoiseSchedule&);

}  // namespace zestdiff
