#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "zestdiff/probe.hpp"
#include "zestdiff/schedule.hpp"
#include "zestdiff/tensor.hpp"

namespace zestdiff {

enum class NormMode { none, l1, l2, linf };
NormMode parse_norm_mode(const std::string& name);
std::string norm_mode_name(NormMode m);

enum class LossMode { bce, combined };
LossMode parse_loss_mode(const std::string& name);
std::string loss_mode_name(LossMode m);

// Decay of the guidance step over sampling: noise-std is sqrt(1 - alpha_t),
// noise-var is 1 - alpha_t.
enum class StepDecay { noise_std, noise_var };
StepDecay parse_step_decay(const std::string& name);
std::string step_decay_name(StepDecay d);

// Where the normalised gradient step lands: on the guided noise estimate
// before the DDIM step (noise), or on x_{t-1} after it (sample).
enum class UpdateTarget { noise, sample };
UpdateTarget parse_update_target(const std::string& name);
std::string update_target_name(UpdateTarget u);

struct GuidanceConfig {
  double eta = 1.0;
  double tau = 0.5;
  NormMode norm_mode = NormMode::linf;
  LossMode loss_mode = LossMode::combined;
  LayerFilter layer_filter = LayerFilter::res_both;
  Averaging averaging = Averaging::global;
  double pww_weight = 0.0;
  double cfg_scale = 3.0;
  StepDecay step_decay = StepDecay::noise_std;
  UpdateTarget update_target = UpdateTarget::noise;

  void validate() const;
};

void to_json(nlohmann::json& j, const GuidanceConfig& c);
void from_json(const nlohmann::json& j, GuidanceConfig& c);

struct LossReport {
  double total = 0.0;
  std::vector<double> bce;       // per segment
  std::vector<double> norm_bce;  // per segment; zeros in bce mode
};

template <typename T>
struct ZestLoss {
  Tensor<T> total;  // scalar, on the graph
  LossReport report;
};

/// Sum over segments of BCE(S_hat_i, S_i), plus BCE(S_hat_i / max S_hat_i, S_i)
/// in combined mode. Masks are compared at the estimate's resolution.
template <typename T>
ZestLoss<T> zest_loss(const SegmentEstimate<T>& estimate, const std::vector<BinaryMask>& masks, LossMode mode);

/// Group-size weighted mean of the per-group losses (per-layer / per-head
/// averaging apply the loss before averaging).
template <typename T>
ZestLoss<T> zest_loss(const GroupedEstimates<T>& estimates, const SegmentSpec& segments, LossMode mode);

/// sqrt(1 - alpha_t), or 1 - alpha_t for StepDecay::noise_var.
double lambda_schedule(int t, const NoiseSchedule& schedule, StepDecay decay = StepDecay::noise_std);

inline constexpr double kNormGuard = 1e-12;

/// none: g; L1: g * numel / |g|_1; L2: g * sqrt(numel) / |g|_2; Linf: g / |g|_inf.
/// Returns g unchanged when the norm is below kNormGuard. Non-finite input
/// raises NumericalError.
template <typename T>
Tensor<T> normalize_grad(const Tensor<T>& g, NormMode mode);

/// x_prev - eta * lambda(t) * normalize_grad(grad).
template <typename T>
Tensor<T> guided_update(const Tensor<T>& x_prev, const Tensor<T>& grad, int t, const GuidanceConfig& cfg,
                        const NoiseSchedule& schedule);

/// eps_hat + eta * lambda(t) * normalize_grad(grad). Raising the noise
/// estimate along the gradient lowers the loss at x_{t-1}.
template <typename T>
Tensor<T> guided_noise(const Tensor<T>& eps_hat, const Tensor<T>& grad, int t, const GuidanceConfig& cfg,
                       const NoiseSchedule& schedule);

/// Adds W * lambda(t) to logits (..., P, N) at (pixel p, token j) whenever
/// p lies in S_i and j is in T_i. Masks must match the logits' resolution.
template <typename T>
Tensor<T> pww_bias(const Tensor<T>& logits, const std::vector<BinaryMask>& masks,
                   const std::vector<std::vector<int>>& token_sets, double weight, int t, const NoiseSchedule& schedule);

/// The (P, N) additive bias of pww_bias for each attention resolution, ready
/// for UNetForwardOptions::attention_bias. Empty when the weight is zero.
template <typename T>
std::map<int, Tensor<T>> pww_bias_maps(const SegmentSpec& segments, const std::vector<int>& resolutions,
                                       int context_len, double weight, int t, const NoiseSchedule& schedule);

}  // namespace zestdiff
