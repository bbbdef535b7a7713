#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "test_util.hpp"
#include "zestdiff/dataset.hpp"
#include "zestdiff/shapes.hpp"

using namespace zestdiff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("zestdiff_test_shapes_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

BinaryMask mask_from(int size, std::initializer_list<std::pair<int, int>> cells) {
  BinaryMask m = BinaryMask::empty(size, size);
  for (auto [y, x] : cells) m.at(y, x) = 1;
  return m;
}

}  // namespace

TEST(Palette, AnchorsWellSeparated) {
  const auto& p = Palette::standard();
  EXPECT_EQ(p.object_count(), 6);
  for (int a = 0; a < p.anchor_count(); ++a)
    for (int b = a + 1; b < p.anchor_count(); ++b) EXPECT_GE(p.anchor_distance(a, b), 0.5) << a << " " << b;
}

TEST(Scene, InvariantsHold) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const int k = 1 + static_cast<int>(seed % 3);
    const Scene s = generate_scene(seed, k);
    ASSERT_EQ(s.objects.size(), static_cast<size_t>(k));
    ASSERT_EQ(s.masks.size(), static_cast<size_t>(k));
    EXPECT_EQ(s.image.width, 32);
    for (size_t i = 0; i < s.masks.size(); ++i) {
      EXPECT_GE(s.masks[i].area(), 52) << "seed " << seed;
      EXPECT_EQ(s.masks[i], rasterize_mask(s.objects[i], 32));
      if (i > 0) EXPECT_LT(s.objects[i - 1].color, s.objects[i].color);  // distinct, canonical order
      for (size_t j = i + 1; j < s.masks.size(); ++j) EXPECT_EQ(iou(s.masks[i], s.masks[j]), 0.0);
    }
  }
  EXPECT_THROW(generate_scene(1, 0), std::invalid_argument);
  EXPECT_THROW(generate_scene(1, 4), std::invalid_argument);
}

TEST(Scene, Deterministic) {
  const Scene a = generate_scene(42, 3), b = generate_scene(42, 3);
  EXPECT_EQ(a.objects, b.objects);
  EXPECT_EQ(a.image.pixels, b.image.pixels);
  EXPECT_EQ(a.masks, b.masks);
  EXPECT_EQ(scene_for_index(9, 17).image.pixels, scene_for_index(9, 17).image.pixels);
  EXPECT_NE(scene_for_index(9, 17).image.pixels, scene_for_index(9, 18).image.pixels);
}

TEST(Scene, MarginalsUniform) {
  std::map<int, int> shapes, colors;
  int objects = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    for (const auto& o : scene_for_index(2024, i).objects) {
      ++shapes[static_cast<int>(o.shape)];
      ++colors[o.color];
      ++objects;
    }
  }
  ASSERT_EQ(shapes.size(), 3u);
  ASSERT_EQ(colors.size(), 6u);
  for (auto [k, n] : shapes) EXPECT_NEAR(static_cast<double>(n) / objects, 1.0 / 3.0, 0.03) << "shape " << k;
  for (auto [k, n] : colors) EXPECT_NEAR(static_cast<double>(n) / objects, 1.0 / 6.0, 0.03) << "colour " << k;
}

TEST(Scene, CaptionRoundTrip) {
  const Vocabulary vocab;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const Scene s = scene_for_index(5, i);
    const auto parsed = parse_caption(s.caption(vocab), vocab);
    ASSERT_EQ(parsed.objects.size(), s.objects.size());
    for (size_t k = 0; k < s.objects.size(); ++k) {
      EXPECT_EQ(parsed.objects[k].shape, s.objects[k].shape);
      EXPECT_EQ(parsed.objects[k].color, s.objects[k].color);
    }
    EXPECT_EQ(parsed.background, s.background);
    const auto words = s.caption_words();
    const auto sets = s.token_sets();
    for (size_t k = 0; k < sets.size(); ++k) {
      ASSERT_EQ(sets[k].size(), 2u);
      EXPECT_EQ(words[static_cast<size_t>(sets[k][0])], Palette::standard().objects()[static_cast<size_t>(s.objects[k].color)].name);
      EXPECT_EQ(words[static_cast<size_t>(sets[k][1])], shape_name(s.objects[k].shape));
    }
  }
  EXPECT_THROW(parse_caption(std::vector<std::string>{"a", "red", "circle"}), std::invalid_argument);
  EXPECT_THROW(parse_caption(std::vector<std::string>{"a", "red", "blob", "on", "gray", "background"}),
               std::invalid_argument);
}

TEST(Oracle, RecoversRenderedMasks) {
  const auto& pal = Palette::standard();
  for (std::uint64_t i = 0; i < 500; ++i) {
    const Scene s = scene_for_index(11, i);
    const auto oracle = oracle_segment(s.image, pal);
    ASSERT_EQ(oracle.size(), static_cast<size_t>(pal.anchor_count()));
    for (size_t k = 0; k < s.objects.size(); ++k) {
      EXPECT_GE(iou(oracle[static_cast<size_t>(s.objects[k].color)], s.masks[k]), 0.95) << "scene " << i;
    }
    // The tensor path agrees with the 8-bit path.
    EXPECT_EQ(oracle_segment(image_to_tensor<float>(s.image), pal), oracle);
  }
}

TEST(Oracle, UniformAndSingleAnchorImages) {
  const auto& pal = Palette::standard();
  const int bg = pal.object_count();  // first background anchor
  for (int anchor : {bg, 0, 3}) {
    Image8 img;
    img.width = img.height = 8;
    img.pixels.resize(8 * 8 * 3);
    const auto rgb = pal.anchors()[static_cast<size_t>(anchor)].rgb;
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = rgb[i % 3];
    const auto masks = oracle_segment(img, pal);
    for (int a = 0; a < pal.anchor_count(); ++a) EXPECT_EQ(masks[static_cast<size_t>(a)].area(), a == anchor ? 64 : 0);
  }
}

TEST(Miou, Oracles) {
  const auto gt = mask_from(4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  EXPECT_DOUBLE_EQ(miou({gt}, {gt}), 1.0);
  EXPECT_DOUBLE_EQ(miou({mask_from(4, {{2, 2}, {2, 3}, {3, 2}, {3, 3}})}, {gt}), 0.0);
  EXPECT_DOUBLE_EQ(miou({mask_from(4, {{0, 0}, {0, 1}})}, {gt}), 0.5);
  // Empty in both: skipped; empty ground truth with a prediction: zero.
  EXPECT_DOUBLE_EQ(miou({gt, BinaryMask::empty(4, 4)}, {gt, BinaryMask::empty(4, 4)}), 1.0);
  EXPECT_DOUBLE_EQ(miou({gt, gt}, {gt, BinaryMask::empty(4, 4)}), 0.5);
  EXPECT_DOUBLE_EQ(miou({BinaryMask::empty(4, 4)}, {BinaryMask::empty(4, 4)}), 1.0);
  EXPECT_THROW(miou({BinaryMask::empty(8, 8)}, {gt}), std::invalid_argument);
  EXPECT_THROW(miou({gt, gt}, {gt}), std::invalid_argument);
}

TEST(Masks, DownsampleByAreaMajority) {
  BinaryMask m = BinaryMask::empty(4, 4);
  m.at(0, 0) = m.at(0, 1) = 1;              // half of the top-left block
  m.at(2, 2) = 1;                           // a quarter of the bottom-right block
  m.at(0, 2) = m.at(0, 3) = m.at(1, 3) = 1;  // three quarters of the top-right block
  const auto d = downsample_mask(m, 2);
  EXPECT_EQ(d.data, (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_EQ(downsample_mask(m, 4), m);
  EXPECT_THROW(downsample_mask(m, 3), std::invalid_argument);
}

TEST(Dataset, SplitArithmetic) {
  EXPECT_EQ(validation_count(100), 5);
  EXPECT_EQ(validation_count(1), 0);
  EXPECT_EQ(validation_count(39), 1);
  const auto dir = temp_dir("split");
  const auto summary = build_dataset(dir, 100, 3, Vocabulary());
  EXPECT_EQ(summary.n_train, 95);
  EXPECT_EQ(summary.n_val, 5);
  const Dataset loaded = load_dataset(dir, Vocabulary());
  EXPECT_EQ(loaded.size(), 100);
  EXPECT_EQ(loaded.n_train, 95);
  const Dataset mem = make_dataset(100, 3, Vocabulary());
  EXPECT_EQ(loaded.images, mem.images);
  fs::remove_all(dir);
}

TEST(Dataset, RebuildIsByteIdentical) {
  const auto a = temp_dir("a"), b = temp_dir("b");
  build_dataset(a, 30, 8, Vocabulary());
  build_dataset(b, 30, 8, Vocabulary());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  EXPECT_GE(files.size(), 32u);  // images, captions, one mask per scene
  for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, SingleSceneWarns) {
  const auto dir = temp_dir("one");
  const auto summary = build_dataset(dir, 1, 1, Vocabulary());
  EXPECT_EQ(summary.n_train, 1);
  EXPECT_EQ(summary.n_val, 0);
  EXPECT_FALSE(summary.warnings.empty());
  fs::remove_all(dir);
}

TEST(Dataset, BadRequestsRejected) {
  const auto blocker = temp_dir("blocker");
  { std::ofstream(blocker) << "not a directory"; }
  EXPECT_ANY_THROW(build_dataset(blocker / "data", 5, 1, Vocabulary()));
  fs::remove(blocker);
  EXPECT_THROW(build_dataset(temp_dir("zero"), 0, 1, Vocabulary()), std::invalid_argument);
}
