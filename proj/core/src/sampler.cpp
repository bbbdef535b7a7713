#include "zestdiff/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "zestdiff/errors.hpp"
#include "zestdiff/ops.hpp"
#include "zestdiff/rng.hpp"
#include "zestdiff/shapes.hpp"

namespace zestdiff {

void SamplerConfig::validate() const {
  if (steps < 2) throw std::invalid_argument("sampler: steps must be >= 2");
}

std::vector<int> ddim_timesteps(int T_train, int steps) {
  if (steps < 2) throw std::invalid_argument("ddim_timesteps: steps must be >= 2");
  if (steps > T_train) throw std::invalid_argument("ddim_timesteps: more steps than training timesteps");
  std::vector<int> ts(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    ts[static_cast<size_t>(k)] =
        1 + static_cast<int>(std::lround(static_cast<double>(k) * (T_train - 1) / static_cast<double>(steps - 1)));
  }
  return ts;
}

int guided_step_count(double tau, int steps) {
  if (tau <= 0.0) return 0;
  return std::min(steps, static_cast<int>(std::ceil(tau * steps - 1e-9)));
}

template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, int t_prev, const NoiseSchedule& schedule) {
  if (t <= t_prev) {
    throw std::invalid_argument("ddim_step: need t > t_prev, got t=" + std::to_string(t) +
                                " t_prev=" + std::to_string(t_prev));
  }
  if (x_t.shape() != eps_hat.shape()) {
    throw std::invalid_argument("ddim_step: x_t " + shape_str(x_t.shape()) + " vs eps " + shape_str(eps_hat.shape()));
  }
  const double sa = std::sqrt(schedule.at(t));
  const double sn = std::sqrt(1.0 - schedule.at(t));
  const double sa_prev = std::sqrt(schedule.at(t_prev));
  const double sn_prev = std::sqrt(1.0 - schedule.at(t_prev));
  std::vector<T> out(x_t.data().size());
  auto x = x_t.data();
  auto e = eps_hat.data();
  for (size_t i = 0; i < out.size(); ++i) {
    const double x0 = (static_cast<double>(x[i]) - sn * static_cast<double>(e[i])) / sa;
    out[i] = static_cast<T>(sa_prev * x0 + sn_prev * static_cast<double>(e[i]));
  }
  return Tensor<T>::from_data(x_t.shape(), std::move(out));
}

template <typename T>
Tensor<T> clip_noise(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& schedule) {
  if (x_t.shape() != eps_hat.shape()) {
    throw std::invalid_argument("clip_noise: x_t " + shape_str(x_t.shape()) + " vs eps " + shape_str(eps_hat.shape()));
  }
  if (t < 1) throw std::invalid_argument("clip_noise: t must be >= 1");
  const double sa = std::sqrt(schedule.at(t));
  const double sn = std::sqrt(1.0 - schedule.at(t));
  std::vector<T> out(x_t.data().size());
  auto x = x_t.data();
  auto e = eps_hat.data();
  for (size_t i = 0; i < out.size(); ++i) {
    const double x0 = std::clamp((static_cast<double>(x[i]) - sn * static_cast<double>(e[i])) / sa, -1.0, 1.0);
    out[i] = static_cast<T>((static_cast<double>(x[i]) - sa * x0) / sn);
  }
  return Tensor<T>::from_data(x_t.shape(), std::move(out));
}

template <typename T>
Tensor<T> cfg_noise(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double s) {
  if (eps_cond.shape() != eps_uncond.shape()) {
    throw std::invalid_argument("cfg_noise: " + shape_str(eps_cond.shape()) + " vs " + shape_str(eps_uncond.shape()));
  }
  std::vector<T> out(eps_cond.data().size());
  auto c = eps_cond.data();
  auto u = eps_uncond.data();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(u[i]) + s * (static_cast<double>(c[i]) - static_cast<double>(u[i])));
  }
  return Tensor<T>::from_data(eps_cond.shape(), std::move(out));
}

namespace {

template <typename T>
TensorF to_float(const Tensor<T>& t) {
  return TensorF::from_data(t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
}

}  // namespace

template <typename T>
SampleResult<T> sample(const Denoiser<T>& model, const PromptSpec& prompt, const std::optional<SegmentSpec>& segments,
                       const GuidanceConfig& guidance, const SamplerConfig& sampler, const SampleOptions& options) {
  using clock = std::chrono::steady_clock;
  guidance.validate();
  sampler.validate();
  const auto& cfg = model.config();
  prompt.padded(model.vocab(), cfg.context_len);  // length and id checks
  if (segments) segments->validate(static_cast<int>(prompt.tokens.size()));
  if (options.trace && !segments) throw std::invalid_argument("sample: a trace needs segments to estimate");

  const auto& schedule = model.schedule();
  const auto ts = ddim_timesteps(schedule.T, sampler.steps);
  const int n_guided = guided_step_count(guidance.tau, sampler.steps);
  const bool use_guidance = segments.has_value() && guidance.eta > 0.0;
  const bool use_pww = segments.has_value() && guidance.pww_weight > 0.0;
  const auto resolutions = model.attention_resolutions();

  Rng rng(sampler.seed);
  Tensor<T> x = rng.normal_tensor<T>({1, cfg.in_channels, cfg.image_size, cfg.image_size});

  SampleResult<T> result;
  auto& trace = result.trace;
  const auto run_start = clock::now();
  for (int i = 0; i < sampler.steps; ++i) {
    const auto step_start = clock::now();
    const int t = ts[static_cast<size_t>(sampler.steps - 1 - i)];
    const int t_prev = i + 1 < sampler.steps ? ts[static_cast<size_t>(sampler.steps - 2 - i)] : 0;
    const bool guided = use_guidance && i < n_guided;
    const bool capture = guided || options.trace;

    UNetForwardOptions<T> fwd;
    if (use_pww) {
      fwd.attention_bias =
          pww_bias_maps<T>(*segments, resolutions, cfg.context_len, guidance.pww_weight, t, schedule);
    }

    TraceEntry entry;
    entry.step = i;
    entry.t = t;
    entry.guided = guided;

    Tensor<T> x_in = x;
    Tensor<T> eps_cond;
    std::optional<ZestLoss<T>> loss;
    {
      std::optional<NoGradGuard> no_grad;
      if (guided) {
        x_in = x.detach();
        x_in.set_requires_grad(true);
      } else {
        no_grad.emplace();
      }
      auto pred = model.predict_noise(x_in, t, prompt, capture, fwd);
      eps_cond = pred.eps;
      if (capture) {
        const auto est = segment_estimates(pred.records, *segments, guidance.averaging, guidance.layer_filter);
        loss = zest_loss(est, *segments, guidance.loss_mode);
        entry.loss = loss->report.total;
        const auto global = guidance.averaging == Averaging::global
                                ? est.groups.front()
                                : segment_estimate(pred.records, *segments, guidance.layer_filter);
        entry.estimates = to_float(global.maps);
      }
    }
    ++trace.conditional_passes;

    if (guided) {
      backward(loss->total);
      ++trace.backward_passes;
    }
    {
      NoGradGuard no_grad;
      auto uncond = model.predict_noise(x, t, std::nullopt, false);
      ++trace.unconditional_passes;
      Tensor<T> eps_hat = cfg_noise(eps_cond, uncond.eps, guidance.cfg_scale);
      if (sampler.clip_x0) eps_hat = clip_noise(x, eps_hat, t, schedule);
      const bool on_noise = guided && guidance.update_target == UpdateTarget::noise;
      if (on_noise) eps_hat = guided_noise(eps_hat, x_in.grad_tensor(), t, guidance, schedule);
      Tensor<T> x_next = ddim_step(x, eps_hat, t, t_prev, schedule);
      if (guided && !on_noise) x_next = guided_update(x_next, x_in.grad_tensor(), t, guidance, schedule);
      x = x_next;
    }

    if (options.keep_x) trace.x_snapshots.push_back(to_float(x));
    trace.entries.push_back(std::move(entry));
    trace.step_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - step_start).count());
  }
  trace.total_ms = std::chrono::duration<double, std::milli>(clock::now() - run_start).count();

  for (T v : x.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericalError("sample: non-finite values in the final image");
  }
  result.x0 = x;
  result.image = tensor_to_image(x);
  return result;
}

#define ZD_INSTANTIATE(T)                                                                                    \
  template Tensor<T> ddim_step(const Tensor<T>&, const Tensor<T>&, int, int, const NoiseSchedule&);          \
  template Tensor<T> cfg_noise(const Tensor<T>&, const Tensor<T>&, double);                                 \
  template Tensor<T> clip_noise(const Tensor<T>&, const Tensor<T>&, int, const NoiseSchedule&);              \
  template SampleResult<T> sample(const Denoiser<T>&, const PromptSpec&, const std::optional<SegmentSpec>&, \
                                  const GuidanceConfig&, const SamplerConfig&, const SampleOptions&);

ZD_INSTANTIATE(float)
ZD_INSTANTIATE(double)
#undef ZD_INSTANTIATE

}  // namespace zestdiff
