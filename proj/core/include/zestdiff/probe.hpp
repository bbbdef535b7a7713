#pragma once

#include <string>
#include <vector>

#include "zestdiff/attention_record.hpp"
#include "zestdiff/ntc.hpp"
#include "zestdiff/shapes.hpp"
#include "zestdiff/tensor.hpp"

namespace zestdiff {

enum class LayerFilter { all, encoder_only, decoder_only, res_high_only, res_low_only, res_both };
LayerFilter parse_layer_filter(const std::string& name);
std::string layer_filter_name(LayerFilter f);
const std::vector<std::string>& layer_filter_names();

enum class Averaging { global, per_layer, per_head };
Averaging parse_averaging(const std::string& name);
std::string averaging_name(Averaging a);

/// Conditioning segments: K binary masks at the working resolution, each tied
/// to the prompt positions of the words describing it.
struct SegmentSpec {
  int resolution = 16;
  std::vector<BinaryMask> masks;
  std::vector<std::vector<int>> token_sets;
  std::vector<std::string> texts;

  std::size_t size() const { return masks.size(); }
  /// Throws std::invalid_argument on empty token sets, non-binary or
  /// mis-sized masks, or token indices outside [0, prompt_length).
  void validate(int prompt_length) const;
  /// Masks downsampled by area majority to `res` (identity when equal).
  std::vector<BinaryMask> masks_at(int res) const;
};

/// Segments for a rendered scene: its object masks downsampled to `resolution`.
SegmentSpec segments_for_scene(const Scene& scene, int resolution = 16);

/// Soft segment maps, (K, H, W).
template <typename T>
struct SegmentEstimate {
  Tensor<T> maps;
  int count() const { return static_cast<int>(maps.dim(0)); }
  int resolution() const { return static_cast<int>(maps.dim(1)); }
};

/// Estimates for separately averaged groups (layers or heads) with weights
/// proportional to group size; a single group for global averaging.
template <typename T>
struct GroupedEstimates {
  std::vector<SegmentEstimate<T>> groups;
  std::vector<double> weights;
  std::vector<std::string> labels;
};

template <typename T>
std::vector<AttentionRecord<T>> filter_records(const std::vector<AttentionRecord<T>>& records, LayerFilter filter);

/// Each record's map as an (N, Hmax, Wmax) stack, bilinearly resized (corner
/// aligned) to the largest resolution among the records.
template <typename T>
std::vector<Tensor<T>> upsample_to_max(const std::vector<AttentionRecord<T>>& records);

/// Mean over records of the token-set sums of the upsampled maps. Records are
/// filtered first; L counts the surviving (layer, head) pairs.
template <typename T>
GroupedEstimates<T> segment_estimates(const std::vector<AttentionRecord<T>>& records, const SegmentSpec& segments,
                                      Averaging averaging, LayerFilter filter);

/// Global estimate only.
template <typename T>
SegmentEstimate<T> segment_estimate(const std::vector<AttentionRecord<T>>& records, const SegmentSpec& segments,
                                    LayerFilter filter);

/// softmax(Q K^T * scale) over classes: queries (P, d), class keys (K, d).
template <typename T>
Tensor<T> pooled_class_probabilities(const Tensor<T>& queries, const Tensor<T>& class_keys, double scale);

/// Class-probability maps from per-layer probe attention (1, heads, HW, K):
/// upsampled to the largest resolution and averaged over layers and heads.
/// Returns (K, H, W); every pixel's column sums to 1.
template <typename T>
Tensor<T> pooled_class_maps(const std::vector<LayerAttention<T>>& probe, LayerFilter filter);

/// Per-step record of a sampling run used for traces.
struct TraceEntry {
  int step = 0;
  int t = 0;
  TensorF estimates;  // (K, H, W); undefined when attention was not captured
  double loss = 0.0;
  bool guided = false;
};

/// NTC container with `step{i}/seg{k}` maps and `step{i}/loss` scalars.
/// Throws when an entry lacks captured estimates.
NtcFile attention_trace(const std::vector<TraceEntry>& entries);

}  // namespace zestdiff
