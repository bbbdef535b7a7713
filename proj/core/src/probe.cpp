#include "zestdiff/probe.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "zestdiff/ops.hpp"

namespace zestdiff {

namespace {

const std::vector<std::pair<LayerFilter, std::string>>& filter_table() {
  static const std::vector<std::pair<LayerFilter, std::string>> table = {
      {LayerFilter::all, "all"},
      {LayerFilter::encoder_only, "encoder-only"},
      {LayerFilter::decoder_only, "decoder-only"},
      {LayerFilter::res_high_only, "res-high-only"},
      {LayerFilter::res_low_only, "res-low-only"},
      {LayerFilter::res_both, "res-both"},
  };
  return table;
}

}  // namespace

LayerFilter parse_layer_filter(const std::string& name) {
  for (const auto& [f, n] : filter_table()) {
    if (n == name) return f;
  }
  throw std::invalid_argument("unknown layer filter '" + name +
                              "' (expected all, encoder-only, decoder-only, res-high-only, res-low-only, res-both)");
}

std::string layer_filter_name(LayerFilter f) {
  for (const auto& [g, n] : filter_table()) {
    if (g == f) return n;
  }
  return "?";
}

const std::vector<std::string>& layer_filter_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [_, n] : filter_table()) v.push_back(n);
    return v;
  }();
  return names;
}

Averaging parse_averaging(const std::string& name) {
  if (name == "global") return Averaging::global;
  if (name == "per-layer" || name == "per_layer") return Averaging::per_layer;
  if (name == "per-head" || name == "per_head") return Averaging::per_head;
  throw std::invalid_argument("unknown averaging '" + name + "' (expected global, per-layer, per-head)");
}

std::string averaging_name(Averaging a) {
  switch (a) {
    case Averaging::global: return "global";
    case Averaging::per_layer: return "per-layer";
    case Averaging::per_head: return "per-head";
  }
  return "?";
}

void SegmentSpec::validate(int prompt_length) const {
  if (masks.size() != token_sets.size()) throw std::invalid_argument("segments: mask and token-set counts differ");
  if (masks.empty()) throw std::invalid_argument("segments: no segments given");
  for (size_t i = 0; i < masks.size(); ++i) {
    const auto& m = masks[i];
    if (m.height != resolution || m.width != resolution) {
      throw std::invalid_argument("segments: mask " + std::to_string(i) + " is " + std::to_string(m.height) + "x" +
                                  std::to_string(m.width) + ", expected " + std::to_string(resolution));
    }
    if (std::any_of(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v > 1; })) {
      throw std::invalid_argument("segments: mask " + std::to_string(i) + " is not binary");
    }
    if (token_sets[i].empty()) throw std::invalid_argument("segments: token set " + std::to_string(i) + " is empty");
    for (int j : token_sets[i]) {
      if (j < 0 || j >= prompt_length) {
        throw std::invalid_argument("segments: token index " + std::to_string(j) + " outside the prompt (length " +
                                    std::to_string(prompt_length) + ")");
      }
    }
  }
}

std::vector<BinaryMask> SegmentSpec::masks_at(int res) const {
  std::vector<BinaryMask> out;
  for (const auto& m : masks) out.push_back(res == m.height ? m : downsample_mask(m, res));
  return out;
}

SegmentSpec segments_for_scene(const Scene& scene, int resolution) {
  SegmentSpec s;
  s.resolution = resolution;
  s.token_sets = scene.token_sets();
  const auto words = scene.caption_words();
  for (size_t k = 0; k < scene.masks.size(); ++k) {
    s.masks.push_back(downsample_mask(scene.masks[k], resolution));
    s.texts.push_back(words[static_cast<size_t>(s.token_sets[k][0])] + " " +
                      words[static_cast<size_t>(s.token_sets[k][1])]);
  }
  return s;
}

template <typename T>
std::vector<AttentionRecord<T>> filter_records(const std::vector<AttentionRecord<T>>& records, LayerFilter filter) {
  if (records.empty()) return {};
  int hi = records.front().layer.resolution, lo = hi;
  for (const auto& r : records) {
    hi = std::max(hi, r.layer.resolution);
    lo = std::min(lo, r.layer.resolution);
  }
  std::vector<AttentionRecord<T>> out;
  for (const auto& r : records) {
    bool keep = false;
    switch (filter) {
      case LayerFilter::all: keep = true; break;
      case LayerFilter::encoder_only: keep = r.layer.part == UNetPart::encoder; break;
      case LayerFilter::decoder_only: keep = r.layer.part == UNetPart::decoder; break;
      case LayerFilter::res_high_only: keep = r.layer.resolution == hi; break;
      case LayerFilter::res_low_only: keep = r.layer.resolution == lo; break;
      case LayerFilter::res_both: keep = r.layer.resolution == hi || r.layer.resolution == lo; break;
    }
    if (keep) out.push_back(r);
  }
  return out;
}

namespace {

template <typename T>
int max_resolution(const std::vector<AttentionRecord<T>>& records) {
  int hi = 0;
  for (const auto& r : records) hi = std::max(hi, r.layer.resolution);
  return hi;
}

// (P, C) map at side `res` -> (C, out, out).
template <typename T>
Tensor<T> to_spatial(const Tensor<T>& pc, int res, int out) {
  const std::int64_t C = pc.dim(1);
  if (pc.dim(0) != static_cast<std::int64_t>(res) * res) {
    throw std::invalid_argument("attention map has " + std::to_string(pc.dim(0)) + " rows, expected " +
                                std::to_string(res * res));
  }
  auto img = reshape(permute(pc, {1, 0}), {1, C, res, res});
  if (res != out) img = resize_bilinear(img, out, out);
  return reshape(img, {C, out, out});
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> upsample_to_max(const std::vector<AttentionRecord<T>>& records) {
  if (records.empty()) throw std::invalid_argument("upsample_to_max: no attention records selected");
  const int hi = max_resolution(records);
  std::vector<Tensor<T>> out;
  for (const auto& r : records) out.push_back(to_spatial(r.map, r.layer.resolution, hi));
  return out;
}

template <typename T>
GroupedEstimates<T> segment_estimates(const std::vector<AttentionRecord<T>>& records, const SegmentSpec& segments,
                                      Averaging averaging, LayerFilter filter) {
  const auto selected = filter_records(records, filter);
  if (selected.empty()) {
    throw std::invalid_argument("layer filter '" + layer_filter_name(filter) + "' selects no attention records");
  }
  const std::int64_t N = selected.front().map.dim(1);
  const auto K = static_cast<std::int64_t>(segments.token_sets.size());
  if (K == 0) throw std::invalid_argument("segment_estimates: no segments");
  std::vector<T> sel(static_cast<size_t>(N * K), T(0));
  for (std::int64_t i = 0; i < K; ++i) {
    for (int j : segments.token_sets[static_cast<size_t>(i)]) {
      if (j < 0 || j >= N) {
        throw std::invalid_argument("segment_estimates: token index " + std::to_string(j) + " outside [0, " +
                                    std::to_string(N) + ")");
      }
      sel[static_cast<size_t>(j * K + i)] = T(1);
    }
  }
  const auto selection = Tensor<T>::from_data({N, K}, std::move(sel));
  const int hi = max_resolution(selected);
  const auto L = static_cast<double>(selected.size());

  // Group members by key, preserving record order.
  std::vector<std::vector<size_t>> groups;
  std::vector<std::string> labels;
  std::map<std::string, size_t> index;
  for (size_t r = 0; r < selected.size(); ++r) {
    std::string key;
    if (averaging == Averaging::per_layer) key = selected[r].layer.name;
    if (averaging == Averaging::per_head) key = selected[r].layer.name + "/h" + std::to_string(selected[r].head);
    if (averaging == Averaging::global) key = "global";
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) {
      groups.emplace_back();
      labels.push_back(key);
    }
    groups[it->second].push_back(r);
  }

  GroupedEstimates<T> out;
  for (size_t g = 0; g < groups.size(); ++g) {
    // Token sums per record, summed per resolution, then resized once (the
    // resize is linear so this equals resizing every record first).
    std::map<int, Tensor<T>> by_res;
    for (size_t r : groups[g]) {
      const auto& rec = selected[r];
      auto m = matmul(rec.map, selection);  // (P, K)
      auto it = by_res.find(rec.layer.resolution);
      if (it == by_res.end()) {
        by_res.emplace(rec.layer.resolution, m);
      } else {
        it->second = add(it->second, m);
      }
    }
    Tensor<T> acc;
    for (const auto& [res, m] : by_res) {
      auto s = to_spatial(m, res, hi);
      acc = acc.defined() ? add(acc, s) : s;
    }
    const auto n = static_cast<double>(groups[g].size());
    out.groups.push_back({mul_scalar(acc, 1.0 / n)});
    out.weights.push_back(n / L);
    out.labels.push_back(labels[g]);
  }
  return out;
}

template <typename T>
SegmentEstimate<T> segment_estimate(const std::vector<AttentionRecord<T>>& records, const SegmentSpec& segments,
                                    LayerFilter filter) {
  return segment_estimates(records, segments, Averaging::global, filter).groups.front();
}

template <typename T>
Tensor<T> pooled_class_probabilities(const Tensor<T>& queries, const Tensor<T>& class_keys, double scale) {
  if (queries.ndim() != 2 || class_keys.ndim() != 2 || queries.dim(1) != class_keys.dim(1)) {
    throw std::invalid_argument("pooled_class_probabilities: queries " + shape_str(queries.shape()) + " vs keys " +
                                shape_str(class_keys.shape()));
  }
  return softmax(mul_scalar(matmul(queries, class_keys, false, true), scale), 1);
}

template <typename T>
Tensor<T> pooled_class_maps(const std::vector<LayerAttention<T>>& probe, LayerFilter filter) {
  std::vector<AttentionRecord<T>> records;
  for (const auto& la : probe) {
    if (la.maps.dim(0) != 1) throw std::invalid_argument("pooled_class_maps: expected a single sample");
    records.push_back({la.layer, -1, -1, mean_axis(select(la.maps, 0, 0), 0)});  // heads averaged
  }
  const auto selected = filter_records(records, filter);
  if (selected.empty()) {
    throw std::invalid_argument("layer filter '" + layer_filter_name(filter) + "' selects no attention records");
  }
  const auto maps = upsample_to_max(selected);
  Tensor<T> acc = maps.front();
  for (size_t i = 1; i < maps.size(); ++i) acc = add(acc, maps[i]);
  return mul_scalar(acc, 1.0 / static_cast<double>(maps.size()));
}

NtcFile attention_trace(const std::vector<TraceEntry>& entries) {
  NtcFile f;
  nlohmann::json steps = nlohmann::json::array();
  int segments = -1;
  for (const auto& e : entries) {
    if (!e.estimates.defined()) {
      throw std::invalid_argument("attention_trace: step " + std::to_string(e.step) +
                                  " has no captured attention (run the sampler with capture enabled)");
    }
    const std::string prefix = "step" + std::to_string(e.step) + "/";
    const auto K = e.estimates.dim(0);
    segments = static_cast<int>(K);
    for (std::int64_t k = 0; k < K; ++k) {
      auto m = select(e.estimates, 0, k);
      f.put(prefix + "seg" + std::to_string(k), m);
    }
    f.put(prefix + "loss", TensorD::scalar(e.loss));
    steps.push_back({{"step", e.step}, {"t", e.t}, {"guided", e.guided}, {"loss", e.loss}});
  }
  f.metadata() = {{"kind", "attention-trace"}, {"segments", segments}, {"steps", steps}};
  return f;
}

#define ZD_INSTANTIATE(T)                                                                                           \
  template std::vector<AttentionRecord<T>> filter_records(const std::vector<AttentionRecord<T>>&, LayerFilter);    \
  template std::vector<Tensor<T>> upsample_to_max(const std::vector<AttentionRecord<T>>&);                        \
  template GroupedEstimates<T> segment_estimates(const std::vector<AttentionRecord<T>>&, const SegmentSpec&,       \
                                                 Averaging, LayerFilter);                                           \
  template SegmentEstimate<T> segment_estimate(const std::vector<AttentionRecord<T>>&, const SegmentSpec&,         \
                                               LayerFilter);                                                        \
  template Tensor<T> pooled_class_probabilities(const Tensor<T>&, const Tensor<T>&, double);                       \
  template Tensor<T> pooled_class_maps(const std::vector<LayerAttention<T>>&, LayerFilter);

ZD_INSTANTIATE(float)
ZD_INSTANTIATE(double)
#undef ZD_INSTANTIATE

}  // namespace zestdiff
