#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zestdiff/shapes.hpp"
#include "zestdiff/text.hpp"

namespace zestdiff {

/// Training data: 8-bit images (n, H, W, 3) with caption prompts. The first
/// n_train items are the training split, the rest validation.
struct Dataset {
  int image_size = 32;
  std::vector<std::uint8_t> images;
  std::vector<PromptSpec> prompts;
  std::int64_t n_train = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(prompts.size()); }
  std::int64_t n_val() const { return size() - n_train; }
  /// (3, H, W) tensor in [-1, 1] for item i.
  std::vector<float> image_chw(std::int64_t i) const;
};

struct DatasetSummary {
  std::int64_t n_train = 0;
  std::int64_t n_val = 0;
  std::int64_t reseeds = 0;
  std::vector<std::string> warnings;
};

/// Validation count for n scenes: floor(0.05 n).
std::int64_t validation_count(std::int64_t n);

/// In-memory dataset of scenes scene_for_index(seed, 0..n-1).
Dataset make_dataset(std::int64_t n, std::uint64_t seed, const Vocabulary& vocab, int size = 32);

/// Writes images.ntc (u8 images, metadata), masks/NNNNNN.pgm (index map,
/// object k stored as k+1) and captions.jsonl. Byte-identical for equal inputs.
DatasetSummary build_dataset(const std::filesystem::path& dir, std::int64_t n, std::uint64_t seed,
                             const Vocabulary& vocab, int size = 32);

Dataset load_dataset(const std::filesystem::path& dir, const Vocabulary& vocab);

}  // namespace zestdiff
