#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "zestdiff/denoiser.hpp"
#include "zestdiff/guidance.hpp"
#include "zestdiff/image_io.hpp"
#include "zestdiff/probe.hpp"

namespace zestdiff {

struct SamplerConfig {
  int steps = 50;
  std::uint64_t seed = 0;
  /// Clamp the predicted clean image to [-1, 1] before each DDIM update.
  bool clip_x0 = true;
  void validate() const;
};

/// Uniform-stride subsequence of {1..T}, strictly increasing, starting at 1
/// and ending at T. Sampling walks it backwards, then projects to t = 0.
std::vector<int> ddim_timesteps(int T_train, int steps);

/// Number of leading steps that receive guidance: ceil(tau * steps).
int guided_step_count(double tau, int steps);

/// Deterministic DDIM update from t to t_prev (t > t_prev >= 0).
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, int t_prev, const NoiseSchedule& schedule);

/// Noise estimate consistent with the predicted x0 clamped to [-1, 1]:
/// (x_t - sqrt(a_t) * clamp(x0_pred)) / sqrt(1 - a_t).
template <typename T>
Tensor<T> clip_noise(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, const NoiseSchedule& schedule);

/// eps_uncond + s * (eps_cond - eps_uncond).
template <typename T>
Tensor<T> cfg_noise(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double s);

struct SampleTrace {
  std::vector<TraceEntry> entries;  // one per step, decreasing t
  std::vector<double> step_ms;
  std::vector<TensorF> x_snapshots;  // x after each step, when requested
  int conditional_passes = 0;
  int unconditional_passes = 0;
  int backward_passes = 0;
  double total_ms = 0.0;
};

struct SampleOptions {
  /// Capture attention at every step (not only guided ones) so the trace has
  /// segment estimates throughout. Requires segments.
  bool trace = false;
  bool keep_x = false;
};

template <typename T>
struct SampleResult {
  Image8 image;
  Tensor<T> x0;  // final sample in [-1, 1] before quantisation (unclamped)
  SampleTrace trace;
};

/// DDIM with classifier-free guidance. Each step: conditional pass (with
/// attention capture and the attention bias when active), unconditional
/// pass, CFG, DDIM update; during the first ceil(tau * steps) steps with
/// segments and eta > 0 the segment loss is back-propagated to x_t and the
/// normalised gradient shifts either the guided noise estimate (after x0
/// clipping, before the DDIM update) or the DDIM output, per update_target.
template <typename T>
SampleResult<T> sample(const Denoiser<T>& model, const PromptSpec& prompt, const std::optional<SegmentSpec>& segments,
                       const GuidanceConfig& guidance, const SamplerConfig& sampler, const SampleOptions& options = {});

}  // namespace zestdiff
