#include "zestdiff/guidance.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "zestdiff/errors.hpp"
#include "zestdiff/ops.hpp"

namespace zestdiff {

NormMode parse_norm_mode(const std::string& name) {
  if (name == "none") return NormMode::none;
  if (name == "L1" || name == "l1") return NormMode::l1;
  if (name == "L2" || name == "l2") return NormMode::l2;
  if (name == "Linf" || name == "linf" || name == "Inf" || name == "inf") return NormMode::linf;
  throw std::invalid_argument("unknown gradient norm '" + name + "' (expected none, L1, L2, Linf)");
}

std::string norm_mode_name(NormMode m) {
  switch (m) {
    case NormMode::none: return "none";
    case NormMode::l1: return "L1";
    case NormMode::l2: return "L2";
    case NormMode::linf: return "Linf";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "bce") return LossMode::bce;
  if (name == "combined") return LossMode::combined;
  throw std::invalid_argument("unknown loss mode '" + name + "' (expected bce or combined)");
}

std::string loss_mode_name(LossMode m) { return m == LossMode::bce ? "bce" : "combined"; }

StepDecay parse_step_decay(const std::string& name) {
  if (name == "noise-std") return StepDecay::noise_std;
  if (name == "noise-var") return StepDecay::noise_var;
  throw std::invalid_argument("unknown step decay '" + name + "' (expected noise-std or noise-var)");
}

std::string step_decay_name(StepDecay d) { return d == StepDecay::noise_std ? "noise-std" : "noise-var"; }

UpdateTarget parse_update_target(const std::string& name) {
  if (name == "noise") return UpdateTarget::noise;
  if (name == "sample") return UpdateTarget::sample;
  throw std::invalid_argument("unknown update target '" + name + "' (expected noise or sample)");
}

std::string update_target_name(UpdateTarget u) { return u == UpdateTarget::noise ? "noise" : "sample"; }

void GuidanceConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("guidance config: " + m); };
  if (!(eta >= 0.0) || !std::isfinite(eta)) fail("eta must be a finite value >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) fail("tau must be in [0, 1]");
  if (!(pww_weight >= 0.0) || !std::isfinite(pww_weight)) fail("pww_weight must be a finite value >= 0");
  if (!std::isfinite(cfg_scale)) fail("cfg_scale must be finite");
}

void to_json(nlohmann::json& j, const GuidanceConfig& c) {
  j = {{"eta", c.eta},
       {"tau", c.tau},
       {"norm_mode", norm_mode_name(c.norm_mode)},
       {"loss_mode", loss_mode_name(c.loss_mode)},
       {"layer_filter", layer_filter_name(c.layer_filter)},
       {"averaging", averaging_name(c.averaging)},
       {"pww_weight", c.pww_weight},
       {"cfg_scale", c.cfg_scale},
       {"step_decay", step_decay_name(c.step_decay)},
       {"update_target", update_target_name(c.update_target)}};
}

void from_json(const nlohmann::json& j, GuidanceConfig& c) {
  const GuidanceConfig d;
  c.eta = j.value("eta", d.eta);
  c.tau = j.value("tau", d.tau);
  c.norm_mode = j.contains("norm_mode") ? parse_norm_mode(j.at("norm_mode").get<std::string>()) : d.norm_mode;
  c.loss_mode = j.contains("loss_mode") ? parse_loss_mode(j.at("loss_mode").get<std::string>()) : d.loss_mode;
  c.layer_filter =
      j.contains("layer_filter") ? parse_layer_filter(j.at("layer_filter").get<std::string>()) : d.layer_filter;
  c.averaging = j.contains("averaging") ? parse_averaging(j.at("averaging").get<std::string>()) : d.averaging;
  c.pww_weight = j.value("pww_weight", d.pww_weight);
  c.cfg_scale = j.value("cfg_scale", d.cfg_scale);
  c.update_target =
      j.contains("update_target") ? parse_update_target(j.at("update_target").get<std::string>()) : d.update_target;
  c.step_decay = j.contains("step_decay") ? parse_step_decay(j.at("step_decay").get<std::string>()) : d.step_decay;
  c.validate();
}

namespace {

constexpr double kProbEps = 1e-6;

template <typename T>
Tensor<T> mask_tensor(const BinaryMask& m) {
  std::vector<T> v(m.data.begin(), m.data.end());
  return Tensor<T>::from_data({m.height, m.width}, std::move(v));
}

}  // namespace

template <typename T>
ZestLoss<T> zest_loss(const SegmentEstimate<T>& estimate, const std::vector<BinaryMask>& masks, LossMode mode) {
  const int K = estimate.count();
  const int res = estimate.resolution();
  if (K < 1) throw std::invalid_argument("zest_loss: no segments");
  if (static_cast<int>(masks.size()) != K) {
    throw std::invalid_argument("zest_loss: " + std::to_string(K) + " estimates but " + std::to_string(masks.size()) +
                                " masks");
  }
  ZestLoss<T> out;
  for (int i = 0; i < K; ++i) {
    const auto& m = masks[static_cast<size_t>(i)];
    if (m.height != res || m.width != res) {
      throw std::invalid_argument("zest_loss: estimate resolution " + std::to_string(res) + " vs mask " +
                                  std::to_string(m.height) + "x" + std::to_string(m.width));
    }
    const auto s_hat = select(estimate.maps, 0, i);
    const auto target = mask_tensor<T>(m);
    auto term = bce(s_hat, target, kProbEps);
    out.report.bce.push_back(static_cast<double>(term.item()));
    if (mode == LossMode::combined) {
      const auto peak = clamp(max_all(s_hat), kProbEps, std::numeric_limits<double>::infinity());
      auto norm_term = bce(div(s_hat, peak), target, kProbEps);
      out.report.norm_bce.push_back(static_cast<double>(norm_term.item()));
      term = add(term, norm_term);
    } else {
      out.report.norm_bce.push_back(0.0);
    }
    out.total = out.total.defined() ? add(out.total, term) : term;
  }
  out.report.total = static_cast<double>(out.total.item());
  return out;
}

template <typename T>
ZestLoss<T> zest_loss(const GroupedEstimates<T>& estimates, const SegmentSpec& segments, LossMode mode) {
  if (estimates.groups.empty()) throw std::invalid_argument("zest_loss: no estimate groups");
  const auto masks = segments.masks_at(estimates.groups.front().resolution());
  if (estimates.groups.size() == 1) return zest_loss(estimates.groups.front(), masks, mode);
  ZestLoss<T> out;
  const size_t K = masks.size();
  out.report.bce.assign(K, 0.0);
  out.report.norm_bce.assign(K, 0.0);
  for (size_t g = 0; g < estimates.groups.size(); ++g) {
    const double w = estimates.weights[g];
    auto part = zest_loss(estimates.groups[g], masks, mode);
    auto scaled = mul_scalar(part.total, w);
    out.total = out.total.defined() ? add(out.total, scaled) : scaled;
    for (size_t i = 0; i < K; ++i) {
      out.report.bce[i] += w * part.report.bce[i];
      out.report.norm_bce[i] += w * part.report.norm_bce[i];
    }
  }
  out.report.total = static_cast<double>(out.total.item());
  return out;
}

double lambda_schedule(int t, const NoiseSchedule& schedule, StepDecay decay) {
  const double v = 1.0 - schedule.at(t);
  return decay == StepDecay::noise_std ? std::sqrt(v) : v;
}

template <typename T>
Tensor<T> normalize_grad(const Tensor<T>& g, NormMode mode) {
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
  for (T v : g.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericalError("normalize_grad: gradient is not finite");
    const double a = std::abs(static_cast<double>(v));
    l1 += a;
    l2 += a * a;
    linf = std::max(linf, a);
  }
  l2 = std::sqrt(l2);
  const auto n = static_cast<double>(g.numel());
  double factor = 1.0;
  switch (mode) {
    case NormMode::none: return g.detach();
    case NormMode::l1:
      if (l1 < kNormGuard) return g.detach();
      factor = n / l1;
      break;
    case NormMode::l2:
      if (l2 < kNormGuard) return g.detach();
      factor = std::sqrt(n) / l2;
      break;
    case NormMode::linf:
      if (linf < kNormGuard) return g.detach();
      std::vector<T> v(g.data().begin(), g.data().end());
      for (auto& x : v) x = static_cast<T>(static_cast<double>(x) / linf);
      return Tensor<T>::from_data(g.shape(), std::move(v));
  }
  std::vector<T> v(g.data().begin(), g.data().end());
  for (auto& x : v) x = static_cast<T>(static_cast<double>(x) * factor);
  return Tensor<T>::from_data(g.shape(), std::move(v));
}

namespace {

// base + step * normalize_grad(grad), accumulated in double.
template <typename T>
Tensor<T> shifted(const Tensor<T>& base, const Tensor<T>& grad, double step, NormMode mode) {
  const auto dir = normalize_grad(grad, mode);
  std::vector<T> v(base.data().begin(), base.data().end());
  auto d = dir.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(static_cast<double>(v[i]) + step * static_cast<double>(d[i]));
  return Tensor<T>::from_data(base.shape(), std::move(v));
}

}  // namespace

template <typename T>
Tensor<T> guided_update(const Tensor<T>& x_prev, const Tensor<T>& grad, int t, const GuidanceConfig& cfg,
                        const NoiseSchedule& schedule) {
  if (x_prev.shape() != grad.shape()) {
    throw std::invalid_argument("guided_update: x " + shape_str(x_prev.shape()) + " vs grad " +
                                shape_str(grad.shape()));
  }
  if (cfg.eta == 0.0) return x_prev;
  return shifted(x_prev, grad, -cfg.eta * lambda_schedule(t, schedule, cfg.step_decay), cfg.norm_mode);
}

template <typename T>
Tensor<T> guided_noise(const Tensor<T>& eps_hat, const Tensor<T>& grad, int t, const GuidanceConfig& cfg,
                       const NoiseSchedule& schedule) {
  if (eps_hat.shape() != grad.shape()) {
    throw std::invalid_argument("guided_noise: eps " + shape_str(eps_hat.shape()) + " vs grad " +
                                shape_str(grad.shape()));
  }
  if (cfg.eta == 0.0) return eps_hat;
  return shifted(eps_hat, grad, cfg.eta * lambda_schedule(t, schedule, cfg.step_decay), cfg.norm_mode);
}

namespace {

template <typename T>
std::vector<T> bias_values(std::int64_t P, std::int64_t N, int res, const std::vector<BinaryMask>& masks,
                           const std::vector<std::vector<int>>& token_sets, double value) {
  if (masks.size() != token_sets.size()) throw std::invalid_argument("pww_bias: mask and token-set counts differ");
  if (P != static_cast<std::int64_t>(res) * res) {
    throw std::invalid_argument("pww_bias: " + std::to_string(P) + " attention rows do not match " +
                                std::to_string(res) + "x" + std::to_string(res) + " masks");
  }
  std::vector<T> bias(static_cast<size_t>(P * N), T(0));
  for (size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].height != res || masks[i].width != res) throw std::invalid_argument("pww_bias: mask resolution mismatch");
    for (int j : token_sets[i]) {
      if (j < 0 || j >= N) throw std::invalid_argument("pww_bias: token index " + std::to_string(j) + " out of range");
      for (std::int64_t p = 0; p < P; ++p) {
        // A pixel/token pair is biased once even if several segments share it.
        if (masks[i].data[static_cast<size_t>(p)]) bias[static_cast<size_t>(p * N + j)] = static_cast<T>(value);
      }
    }
  }
  return bias;
}

}  // namespace

template <typename T>
Tensor<T> pww_bias(const Tensor<T>& logits, const std::vector<BinaryMask>& masks,
                   const std::vector<std::vector<int>>& token_sets, double weight, int t, const NoiseSchedule& schedule) {
  if (weight < 0.0) throw std::invalid_argument("pww_bias: weight must be >= 0");
  if (weight == 0.0 || masks.empty()) return logits;
  if (logits.ndim() < 2) throw std::invalid_argument("pww_bias: logits need (..., P, N) shape");
  const std::int64_t P = logits.dim(-2), N = logits.dim(-1);
  const int res = masks.front().height;
  auto bias = bias_values<T>(P, N, res, masks, token_sets, weight * lambda_schedule(t, schedule));
  return add(logits, Tensor<T>::from_data({P, N}, std::move(bias)));
}

template <typename T>
std::map<int, Tensor<T>> pww_bias_maps(const SegmentSpec& segments, const std::vector<int>& resolutions,
                                       int context_len, double weight, int t, const NoiseSchedule& schedule) {
  std::map<int, Tensor<T>> out;
  if (weight <= 0.0 || segments.size() == 0) return out;
  const double value = weight * lambda_schedule(t, schedule);
  for (int res : resolutions) {
    if (out.count(res)) continue;
    const auto masks = segments.masks_at(res);
    const std::int64_t P = static_cast<std::int64_t>(res) * res;
    out.emplace(res, Tensor<T>::from_data({P, context_len},
                                          bias_values<T>(P, context_len, res, masks, segments.token_sets, value)));
  }
  return out;
}

#define ZD_INSTANTIATE(T)                                                                                         \
  template ZestLoss<T> zest_loss(const SegmentEstimate<T>&, const std::vector<BinaryMask>&, LossMode);           \
  template ZestLoss<T> zest_loss(const GroupedEstimates<T>&, const SegmentSpec&, LossMode);                      \
  template Tensor<T> normalize_grad(const Tensor<T>&, NormMode);                                                 \
  template Tensor<T> guided_update(const Tensor<T>&, const Tensor<T>&, int, const GuidanceConfig&,               \
                                   const NoiseSchedule&);                                                         \
  template Tensor<T> guided_noise(const Tensor<T>&, const Tensor<T>&, int, const GuidanceConfig&,                \
                                  const NoiseSchedule&);                                                          \
  template Tensor<T> pww_bias(const Tensor<T>&, const std::vector<BinaryMask>&,                                  \
                              const std::vector<std::vector<int>>&, double, int, const NoiseSchedule&);          \
  template std::map<int, Tensor<T>> pww_bias_maps(const SegmentSpec&, const std::vector<int>&, int, double, int, \
                                                  const NoiseSchedule&);

ZD_INSTANTIATE(float)
ZD_INSTANTIATE(double)
#undef ZD_INSTANTIATE

}  // namespace zestdiff
