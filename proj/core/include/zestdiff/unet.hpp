#pragma once

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "zestdiff/attention_record.hpp"
#include "zestdiff/tensor.hpp"
#include "zestdiff/text.hpp"

namespace zestdiff {

struct DenoiserConfig {
  int image_size = 32;
  int in_channels = 3;
  int base_channels = 16;
  std::vector<int> channel_mult{1, 2, 4};
  std::vector<int> attention_resolutions{16, 8};
  int heads = 4;
  int head_dim = 16;
  int time_dim = 64;
  int text_dim = 64;
  int context_len = kMaxPromptTokens;
  int groups = 4;
  std::int64_t vocab_size = 40;

  void validate() const;
  int resolution(int level) const { return image_size >> level; }
  int channels(int level) const { return base_channels * channel_mult[static_cast<size_t>(level)]; }
  bool has_attention(int level) const;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

template <typename T>
struct UNetForwardOptions {
  bool capture = false;
  /// Additive pre-softmax bias per attention resolution, shape (H*W, N).
  std::map<int, Tensor<T>> attention_bias;
  /// Optional (1, K, text_dim) keys; each attention layer then also emits
  /// softmax(Q K_probe^T / sqrt(d)) without affecting the output.
  Tensor<T> probe_context;
};

template <typename T>
struct UNetOutput {
  Tensor<T> eps;
  std::vector<LayerAttention<T>> attention;
  std::vector<LayerAttention<T>> probe;
};

/// Noise estimator eps(x_t, t, context): a small U-Net with ResBlocks,
/// time conditioning and multi-head cross-attention to the text context at
/// the configured resolutions.
template <typename T>
class UNet {
 public:
  UNet(DenoiserConfig config, std::uint64_t seed);
  UNet(DenoiserConfig config, std::map<std::string, Tensor<T>> params);

  const DenoiserConfig& config() const { return config_; }
  const std::map<std::string, Tensor<T>>& params() const { return params_; }
  std::map<std::string, Tensor<T>>& params() { return params_; }
  std::int64_t parameter_count() const;
  void set_requires_grad(bool on);

  std::vector<LayerInfo> attention_layers() const;

  /// (B, context_len, text_dim) token embeddings plus positional offsets.
  Tensor<T> encode_text(const std::vector<std::vector<std::int64_t>>& padded_ids) const;
  /// (1, K, text_dim): each class text embedded separately and averaged over its tokens.
  Tensor<T> encode_pooled(const std::vector<std::vector<std::int64_t>>& class_ids) const;

  /// x: (B, C, H, W); t: B timesteps; context: (B, N, text_dim).
  UNetOutput<T> forward(const Tensor<T>& x, const std::vector<int>& t, const Tensor<T>& context,
                        const UNetForwardOptions<T>& options = {}) const;

 private:
  const Tensor<T>& p(const std::string& name) const;
  Tensor<T> linear(const Tensor<T>& x, const std::string& prefix) const;
  Tensor<T> time_embedding(const std::vector<int>& t) const;
  Tensor<T> res_block(const std::string& prefix, const Tensor<T>& x, const Tensor<T>& temb) const;
  Tensor<T> cross_attention(const std::string& prefix, const LayerInfo& info, const Tensor<T>& x,
                            const Tensor<T>& context, const UNetForwardOptions<T>& options,
                            UNetOutput<T>& out) const;
  int group_count(std::int64_t channels) const;

  DenoiserConfig config_;
  std::map<std::string, Tensor<T>> params_;
};

}  // namespace zestdiff
