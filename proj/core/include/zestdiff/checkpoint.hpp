#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "zestdiff/ntc.hpp"
#include "zestdiff/schedule.hpp"
#include "zestdiff/text.hpp"
#include "zestdiff/unet.hpp"

namespace zestdiff {

struct TrainingMeta {
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// AdamW moments keyed by parameter name; empty when not saved.
struct OptimizerState {
  std::int64_t step = 0;
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;
  bool empty() const { return m.empty(); }
};

struct Checkpoint {
  DenoiserConfig config;
  NoiseSchedule schedule;
  Vocabulary vocab;
  TrainingMeta meta;
  std::map<std::string, TensorF> params;
  OptimizerState optimizer;

  /// Freshly initialised weights for `config`.
  static Checkpoint initial(const DenoiserConfig& config, const NoiseSchedule& schedule, std::uint64_t seed);

  NtcFile to_ntc() const;
  static Checkpoint from_ntc(const NtcFile& file);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  /// Hex FNV-1a digest of the serialized container.
  std::string content_hash() const;
};

/// Model instance at precision T built from the checkpoint's weights.
template <typename T>
UNet<T> make_unet(const Checkpoint& ckpt);

std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes);
std::string fnv1a_hex(const std::string& text);

}  // namespace zestdiff
