#pragma once

#include <optional>
#include <vector>

#include "zestdiff/attention_record.hpp"
#include "zestdiff/checkpoint.hpp"
#include "zestdiff/unet.hpp"

namespace zestdiff {

template <typename T>
struct NoisePrediction {
  Tensor<T> eps;
  std::vector<AttentionRecord<T>> records;  // per (layer, head) when captured
  std::vector<LayerAttention<T>> layers;    // the same maps, all heads per layer
  std::vector<LayerAttention<T>> probe;     // pooled-key probe maps, if requested
};

/// Read-only noise estimator for sampling. Weights never require gradients,
/// so one instance can serve several threads.
template <typename T>
class Denoiser {
 public:
  explicit Denoiser(const Checkpoint& ckpt);
  Denoiser(UNet<T> net, NoiseSchedule schedule, Vocabulary vocab);

  const UNet<T>& unet() const { return net_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Vocabulary& vocab() const { return vocab_; }
  const DenoiserConfig& config() const { return net_.config(); }
  std::vector<int> attention_resolutions() const;

  /// (1, N, text_dim) context; nullopt selects the learned null prompt.
  Tensor<T> context(const std::optional<PromptSpec>& prompt) const;

  /// x_t: (1, C, H, W). Prompts longer than 16 tokens are rejected.
  NoisePrediction<T> predict_noise(const Tensor<T>& x_t, int t, const std::optional<PromptSpec>& prompt, bool capture,
                                   const UNetForwardOptions<T>& extra = {}) const;

 private:
  UNet<T> net_;
  NoiseSchedule schedule_;
  Vocabulary vocab_;
};

}  // namespace zestdiff
