#include "zestdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace zestdiff {

GradCheckResult grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckResult result;

  auto leaf = TensorD::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  const TensorD y = f(leaf);
  if (y.numel() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
  if (!std::isfinite(y.item())) {
    result.finite = false;
    result.message = "non-finite function value at the base point";
    return result;
  }
  backward(y);
  const auto g_ad = leaf.grad();

  NoGradGuard no_grad;
  std::vector<double> buf(x.data().begin(), x.data().end());
  for (size_t i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + eps;
    const double fp = f(TensorD::from_data(x.shape(), buf)).item();
    buf[i] = orig - eps;
    const double fm = f(TensorD::from_data(x.shape(), buf)).item();
    buf[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(g_ad[i])) {
      result.finite = false;
      result.worst_index = static_cast<std::int64_t>(i);
      result.message = "non-finite value at coordinate " + std::to_string(i);
      return result;
    }
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(g_ad[i]), std::abs(g_fd), 1e-8});
    const double rel = std::abs(g_ad[i] - g_fd) / denom;
    if (rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_index = static_cast<std::int64_t>(i);
    }
  }
  return result;
}

}  // namespace zestdiff
