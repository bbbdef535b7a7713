#pragma once

#include <string>
#include <vector>

#include "zestdiff/tensor.hpp"

namespace zestdiff {

enum class UNetPart { encoder, decoder };

struct LayerInfo {
  int index = 0;       // order of execution among attention layers
  int resolution = 0;  // spatial side length of the layer's feature map
  UNetPart part = UNetPart::encoder;
  std::string name;
};

/// All heads of one cross-attention layer: maps (B, heads, H*W, N).
template <typename T>
struct LayerAttention {
  LayerInfo layer;
  Tensor<T> maps;
};

/// One head of one layer for one sample: row-stochastic (H*W, N) map.
template <typename T>
struct AttentionRecord {
  LayerInfo layer;
  int head = 0;
  int step = -1;
  Tensor<T> map;
};

/// Splits captured layers into per-head records for sample `batch_index`.
/// The records stay connected to the computation graph.
template <typename T>
std::vector<AttentionRecord<T>> split_heads(const std::vector<LayerAttention<T>>& layers, int batch_index = 0,
                                            int step = -1);

}  // namespace zestdiff
