#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "zestdiff/image_io.hpp"
#include "zestdiff/tensor.hpp"
#include "zestdiff/text.hpp"

namespace zestdiff {

enum class ShapeKind { circle, square, triangle };

inline constexpr int kShapeKinds = 3;
const char* shape_name(ShapeKind kind);
ShapeKind parse_shape(const std::string& name);

struct PaletteColor {
  std::string name;
  std::array<std::uint8_t, 3> rgb;
};

/// Object colours followed by background colours. Anchor index = position in
/// that concatenation.
class Palette {
 public:
  static const Palette& standard();

  const std::vector<PaletteColor>& objects() const { return objects_; }
  const std::vector<PaletteColor>& backgrounds() const { return backgrounds_; }
  std::vector<PaletteColor> anchors() const;
  int object_count() const { return static_cast<int>(objects_.size()); }
  int anchor_count() const { return static_cast<int>(objects_.size() + backgrounds_.size()); }
  int object_index(const std::string& name) const;      // -1 if absent
  int background_index(const std::string& name) const;  // -1 if absent
  /// Euclidean RGB distance between two anchors in [-1, 1] units.
  double anchor_distance(int a, int b) const;

 private:
  Palette(std::vector<PaletteColor> objects, std::vector<PaletteColor> backgrounds);
  std::vector<PaletteColor> objects_;
  std::vector<PaletteColor> backgrounds_;
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // 0 or 1

  static BinaryMask empty(int height, int width);
  std::uint8_t at(int y, int x) const { return data[static_cast<size_t>(y * width + x)]; }
  std::uint8_t& at(int y, int x) { return data[static_cast<size_t>(y * width + x)]; }
  std::int64_t area() const;
  bool operator==(const BinaryMask&) const = default;
};

struct ObjectDesc {
  ShapeKind shape = ShapeKind::circle;
  int color = 0;  // index into Palette::objects()
  int x = 0;      // top-left of the bounding box
  int y = 0;
  int size = 0;   // bounding-box side
  bool operator==(const ObjectDesc&) const = default;
};

struct Scene {
  int size = 32;
  int background = 0;               // index into Palette::backgrounds()
  std::vector<ObjectDesc> objects;  // canonical order: ascending colour index
  std::vector<BinaryMask> masks;    // one per object, pairwise disjoint
  Image8 image;
  std::uint64_t requested_seed = 0;
  std::uint64_t seed = 0;  // seed actually used after deterministic reseeding
  int reseeds = 0;

  std::vector<std::string> caption_words() const;
  std::string caption_text() const;
  PromptSpec caption(const Vocabulary& vocab) const;
  /// Per object, the prompt positions of its colour and shape words.
  std::vector<std::vector<int>> token_sets() const;
};

inline constexpr int kMaxObjects = 3;
inline constexpr int kPlacementAttempts = 100;

/// Renders `count` (1..3) non-overlapping objects with distinct colours, each
/// covering at least 5% of the image. After kPlacementAttempts failed layouts
/// the seed is bumped by one and generation restarts.
Scene generate_scene(std::uint64_t seed, int count, int size = 32);

/// Object count and seed for scene `index` of a benchmark or dataset stream.
Scene scene_for_index(std::uint64_t seed, std::uint64_t index, int size = 32);

BinaryMask rasterize_mask(const ObjectDesc& object, int size);

struct CaptionObject {
  ShapeKind shape;
  int color;
  bool operator==(const CaptionObject&) const = default;
};

struct ParsedCaption {
  std::vector<CaptionObject> objects;
  int background = 0;
};

/// Inverse of Scene::caption_words; throws std::invalid_argument on captions
/// outside the grammar "a C S (and a C S)* on B background".
ParsedCaption parse_caption(const std::vector<std::string>& words);
ParsedCaption parse_caption(const PromptSpec& prompt, const Vocabulary& vocab);

/// Image in [-1, 1] as a (3, H, W) tensor, and back (clamped, rounded).
template <typename T>
Tensor<T> image_to_tensor(const Image8& image);
template <typename T>
Image8 tensor_to_image(const Tensor<T>& chw);

/// Per-anchor masks from nearest-anchor RGB classification. Input is a
/// (3, H, W) or (1, 3, H, W) tensor in [-1, 1].
template <typename T>
std::vector<BinaryMask> oracle_segment(const Tensor<T>& image, const Palette& palette);
std::vector<BinaryMask> oracle_segment(const Image8& image, const Palette& palette);

/// Mean IoU over aligned classes. Classes empty in both are skipped; an empty
/// ground truth with a non-empty prediction scores 0. Returns 1 when every
/// class is skipped.
double miou(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& gt);
double iou(const BinaryMask& a, const BinaryMask& b);

/// Shape guess from the fill ratio of a mask's bounding box.
ShapeKind classify_shape(const BinaryMask& mask);

/// Objects the oracle finds in an image: colours whose region covers at least
/// `min_area` pixels, with the shape classified per colour.
std::vector<CaptionObject> detect_objects(const std::vector<BinaryMask>& oracle_masks, const Palette& palette,
                                          std::int64_t min_area = 26);

/// Area-majority downsampling: a low-resolution cell is set when at least half
/// of its block is set. Size must divide evenly.
BinaryMask downsample_mask(const BinaryMask& mask, int out_size);

}  // namespace zestdiff
