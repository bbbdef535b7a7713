#include "zestdiff/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "zestdiff/rng.hpp"

namespace zestdiff {

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

ShapeKind parse_shape(const std::string& name) {
  if (name == "circle") return ShapeKind::circle;
  if (name == "square") return ShapeKind::square;
  if (name == "triangle") return ShapeKind::triangle;
  throw std::invalid_argument("unknown shape '" + name + "'");
}

Palette::Palette(std::vector<PaletteColor> objects, std::vector<PaletteColor> backgrounds)
    : objects_(std::move(objects)), backgrounds_(std::move(backgrounds)) {}

const Palette& Palette::standard() {
  static const Palette palette(
      {
          {"red", {255, 0, 0}},
          {"green", {0, 255, 0}},
          {"blue", {0, 0, 255}},
          {"yellow", {255, 255, 0}},
          {"cyan", {0, 255, 255}},
          {"magenta", {255, 0, 255}},
      },
      {
          {"gray", {128, 128, 128}},
          {"black", {0, 0, 0}},
          {"white", {255, 255, 255}},
      });
  return palette;
}

std::vector<PaletteColor> Palette::anchors() const {
  auto all = objects_;
  all.insert(all.end(), backgrounds_.begin(), backgrounds_.end());
  return all;
}

int Palette::object_index(const std::string& name) const {
  for (size_t i = 0; i < objects_.size(); ++i) {
    if (objects_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int Palette::background_index(const std::string& name) const {
  for (size_t i = 0; i < backgrounds_.size(); ++i) {
    if (backgrounds_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

double Palette::anchor_distance(int a, int b) const {
  const auto all = anchors();
  double d2 = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double u = all.at(static_cast<size_t>(a)).rgb[static_cast<size_t>(c)] / 127.5;
    const double v = all.at(static_cast<size_t>(b)).rgb[static_cast<size_t>(c)] / 127.5;
    d2 += (u - v) * (u - v);
  }
  return std::sqrt(d2);
}

BinaryMask BinaryMask::empty(int height, int width) {
  BinaryMask m;
  m.height = height;
  m.width = width;
  m.data.assign(static_cast<size_t>(height * width), 0);
  return m;
}

std::int64_t BinaryMask::area() const {
  return std::count(data.begin(), data.end(), std::uint8_t{1});
}

BinaryMask rasterize_mask(const ObjectDesc& o, int size) {
  BinaryMask m = BinaryMask::empty(size, size);
  const double s = o.size;
  const double cx = o.x + s / 2.0;
  const double cy = o.y + s / 2.0;
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      const double fx = px + 0.5;
      const double fy = py + 0.5;
      bool inside = false;
      switch (o.shape) {
        case ShapeKind::circle:
          inside = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy) <= (s / 2.0) * (s / 2.0);
          break;
        case ShapeKind::square:
          inside = px >= o.x && px < o.x + o.size && py >= o.y && py < o.y + o.size;
          break;
        case ShapeKind::triangle: {
          const double dy = fy - o.y;
          inside = dy >= 0.0 && dy <= s && std::abs(fx - cx) <= dy / 2.0;
          break;
        }
      }
      m.at(py, px) = inside ? 1 : 0;
    }
  }
  return m;
}

namespace {

constexpr int kMinSide = 10;
constexpr int kMaxSide = 15;

std::int64_t min_object_area(int size) {
  return static_cast<std::int64_t>(std::ceil(0.05 * size * size));
}

bool try_layout(Rng& rng, int size, std::vector<ObjectDesc>& objects, std::vector<BinaryMask>& masks) {
  BinaryMask used = BinaryMask::empty(size, size);
  masks.clear();
  for (auto& o : objects) {
    o.size = kMinSide + static_cast<int>(rng.below(kMaxSide - kMinSide + 1));
    o.size = std::min(o.size, size);
    o.x = static_cast<int>(rng.below(size - o.size + 1));
    o.y = static_cast<int>(rng.below(size - o.size + 1));
    BinaryMask m = rasterize_mask(o, size);
    if (m.area() < min_object_area(size)) return false;
    for (size_t i = 0; i < m.data.size(); ++i) {
      if (m.data[i] && used.data[i]) return false;
    }
    for (size_t i = 0; i < m.data.size(); ++i) used.data[i] |= m.data[i];
    masks.push_back(std::move(m));
  }
  return true;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int count, int size) {
  if (count < 1 || count > kMaxObjects) throw std::invalid_argument("generate_scene: object count must be in 1..3");
  if (size < 16) throw std::invalid_argument("generate_scene: image size must be >= 16");
  const Palette& palette = Palette::standard();

  Scene scene;
  scene.size = size;
  scene.requested_seed = seed;
  for (std::uint64_t s = seed;; ++s) {
    Rng rng(s);
    std::vector<int> colors(static_cast<size_t>(palette.object_count()));
    std::iota(colors.begin(), colors.end(), 0);
    for (int i = 0; i < count; ++i) {
      const auto j = i + rng.below(static_cast<std::int64_t>(colors.size()) - i);
      std::swap(colors[static_cast<size_t>(i)], colors[static_cast<size_t>(j)]);
    }
    std::vector<ObjectDesc> objects(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      objects[static_cast<size_t>(i)].shape = static_cast<ShapeKind>(rng.below(kShapeKinds));
      objects[static_cast<size_t>(i)].color = colors[static_cast<size_t>(i)];
    }
    std::sort(objects.begin(), objects.end(), [](const auto& a, const auto& b) { return a.color < b.color; });
    scene.background = static_cast<int>(rng.below(static_cast<std::int64_t>(palette.backgrounds().size())));

    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      placed = try_layout(rng, size, objects, scene.masks);
    }
    if (placed) {
      scene.objects = std::move(objects);
      scene.seed = s;
      scene.reseeds = static_cast<int>(s - seed);
      break;
    }
  }

  const auto& bg = palette.backgrounds()[static_cast<size_t>(scene.background)].rgb;
  scene.image = make_image(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      auto rgb = bg;
      for (size_t k = 0; k < scene.objects.size(); ++k) {
        if (scene.masks[k].at(y, x)) rgb = palette.objects()[static_cast<size_t>(scene.objects[k].color)].rgb;
      }
      for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = rgb[static_cast<size_t>(c)];
    }
  }
  return scene;
}

Scene scene_for_index(std::uint64_t seed, std::uint64_t index, int size) {
  const std::uint64_t s = derive_seed(seed, index);
  return generate_scene(s, 1 + static_cast<int>(s % kMaxObjects), size);
}

std::vector<std::string> Scene::caption_words() const {
  const Palette& palette = Palette::standard();
  std::vector<std::string> words;
  for (size_t i = 0; i < objects.size(); ++i) {
    if (i) words.emplace_back("and");
    words.emplace_back("a");
    words.push_back(palette.objects()[static_cast<size_t>(objects[i].color)].name);
    words.emplace_back(shape_name(objects[i].shape));
  }
  words.emplace_back("on");
  words.push_back(palette.backgrounds()[static_cast<size_t>(background)].name);
  words.emplace_back("background");
  return words;
}

std::string Scene::caption_text() const {
  std::string s;
  for (const auto& w : caption_words()) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

PromptSpec Scene::caption(const Vocabulary& vocab) const { return PromptSpec::encode(caption_text(), vocab); }

std::vector<std::vector<int>> Scene::token_sets() const {
  std::vector<std::vector<int>> sets;
  for (size_t i = 0; i < objects.size(); ++i) {
    const int base = static_cast<int>(4 * i);
    sets.push_back({base + 1, base + 2});
  }
  return sets;
}

ParsedCaption parse_caption(const std::vector<std::string>& words) {
  const Palette& palette = Palette::standard();
  auto fail = [&](const std::string& why) {
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    throw std::invalid_argument("caption '" + text + "': " + why);
  };
  ParsedCaption parsed;
  size_t i = 0;
  while (true) {
    if (i + 3 > words.size() || words[i] != "a") fail("expected 'a <color> <shape>'");
    const int color = palette.object_index(words[i + 1]);
    if (color < 0) fail("unknown object color '" + words[i + 1] + "'");
    ShapeKind shape{};
    try {
      shape = parse_shape(words[i + 2]);
    } catch (const std::invalid_argument&) {
      fail("unknown shape '" + words[i + 2] + "'");
    }
    parsed.objects.push_back({shape, color});
    i += 3;
    if (i < words.size() && words[i] == "and") {
      ++i;
      continue;
    }
    break;
  }
  if (i + 3 != words.size() || words[i] != "on" || words[i + 2] != "background") {
    fail("expected 'on <color> background' at the end");
  }
  parsed.background = palette.background_index(words[i + 1]);
  if (parsed.background < 0) fail("unknown background color '" + words[i + 1] + "'");
  return parsed;
}

ParsedCaption parse_caption(const PromptSpec& prompt, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (auto id : prompt.tokens) words.push_back(vocab.word(id));
  return parse_caption(words);
}

template <typename T>
Tensor<T> image_to_tensor(const Image8& image) {
  if (image.channels != 3) throw std::invalid_argument("image_to_tensor: expected RGB");
  const int h = image.height;
  const int w = image.width;
  std::vector<T> v(static_cast<size_t>(3 * h * w));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        v[static_cast<size_t>((c * h + y) * w + x)] = static_cast<T>(image.at(y, x, c) / 127.5 - 1.0);
      }
    }
  }
  return Tensor<T>::from_data({3, h, w}, std::move(v));
}

template <typename T>
Image8 tensor_to_image(const Tensor<T>& t) {
  const auto& s = t.shape();
  const bool batched = s.size() == 4 && s[0] == 1;
  if (!(s.size() == 3 || batched) || s[s.size() - 3] != 3) {
    throw std::invalid_argument("tensor_to_image: expected (3,H,W) or (1,3,H,W), got " + shape_str(s));
  }
  const int h = static_cast<int>(s[s.size() - 2]);
  const int w = static_cast<int>(s[s.size() - 1]);
  Image8 img = make_image(w, h, 3);
  auto d = t.data();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double v = static_cast<double>(d[static_cast<size_t>((c * h + y) * w + x)]);
        v = std::clamp(v, -1.0, 1.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
      }
    }
  }
  return img;
}

std::vector<BinaryMask> oracle_segment(const Image8& image, const Palette& palette) {
  if (image.channels != 3) throw std::invalid_argument("oracle_segment: expected RGB");
  const auto anchors = palette.anchors();
  std::vector<BinaryMask> masks(anchors.size(), BinaryMask::empty(image.height, image.width));
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      int best = 0;
      long best_d = -1;
      for (size_t a = 0; a < anchors.size(); ++a) {
        long d = 0;
        for (int c = 0; c < 3; ++c) {
          const long diff = static_cast<long>(image.at(y, x, c)) - anchors[a].rgb[static_cast<size_t>(c)];
          d += diff * diff;
        }
        if (best_d < 0 || d < best_d) {
          best_d = d;
          best = static_cast<int>(a);
        }
      }
      masks[static_cast<size_t>(best)].at(y, x) = 1;
    }
  }
  return masks;
}

template <typename T>
std::vector<BinaryMask> oracle_segment(const Tensor<T>& image, const Palette& palette) {
  return oracle_segment(tensor_to_image(image), palette);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("iou: resolution mismatch " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  }
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] & b.data[i];
    uni += a.data[i] | b.data[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("miou: class count mismatch");
  double total = 0.0;
  int counted = 0;
  for (size_t k = 0; k < gt.size(); ++k) {
    const auto g = gt[k].area();
    const auto p = pred[k].area();
    if (g == 0 && p == 0) {
      if (pred[k].height != gt[k].height || pred[k].width != gt[k].width) iou(pred[k], gt[k]);
      continue;
    }
    total += iou(pred[k], gt[k]);
    ++counted;
  }
  return counted == 0 ? 1.0 : total / counted;
}

namespace {

BinaryMask largest_component(const BinaryMask& mask) {
  BinaryMask best = BinaryMask::empty(mask.height, mask.width);
  std::vector<int> label(mask.data.size(), -1);
  std::int64_t best_area = 0;
  int next = 0;
  std::vector<int> stack;
  for (size_t start = 0; start < mask.data.size(); ++start) {
    if (!mask.data[start] || label[start] >= 0) continue;
    std::vector<int> members;
    stack.assign(1, static_cast<int>(start));
    label[start] = next;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const int y = p / mask.width;
      const int x = p % mask.width;
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || nx[k] < 0 || ny[k] >= mask.height || nx[k] >= mask.width) continue;
        const int q = ny[k] * mask.width + nx[k];
        if (mask.data[static_cast<size_t>(q)] && label[static_cast<size_t>(q)] < 0) {
          label[static_cast<size_t>(q)] = next;
          stack.push_back(q);
        }
      }
    }
    if (static_cast<std::int64_t>(members.size()) > best_area) {
      best_area = static_cast<std::int64_t>(members.size());
      std::fill(best.data.begin(), best.data.end(), 0);
      for (int p : members) best.data[static_cast<size_t>(p)] = 1;
    }
    ++next;
  }
  return best;
}

}  // namespace

ShapeKind classify_shape(const BinaryMask& mask) {
  const BinaryMask m = largest_component(mask);
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) throw std::invalid_argument("classify_shape: empty mask");
  const double fill = static_cast<double>(m.area()) / static_cast<double>((x1 - x0 + 1) * (y1 - y0 + 1));
  if (fill >= 0.88) return ShapeKind::square;
  if (fill >= 0.64) return ShapeKind::circle;
  return ShapeKind::triangle;
}

std::vector<CaptionObject> detect_objects(const std::vector<BinaryMask>& oracle_masks, const Palette& palette,
                                          std::int64_t min_area) {
  std::vector<CaptionObject> found;
  for (int c = 0; c < palette.object_count(); ++c) {
    const auto& m = oracle_masks.at(static_cast<size_t>(c));
    if (m.area() >= min_area) found.push_back({classify_shape(m), c});
  }
  return found;
}

BinaryMask downsample_mask(const BinaryMask& mask, int out_size) {
  if (out_size <= 0 || mask.height % out_size != 0 || mask.width % out_size != 0 || mask.height != mask.width) {
    throw std::invalid_argument("downsample_mask: " + std::to_string(mask.height) + "x" +
                                std::to_string(mask.width) + " does not divide into " + std::to_string(out_size));
  }
  const int f = mask.height / out_size;
  BinaryMask out = BinaryMask::empty(out_size, out_size);
  for (int y = 0; y < out_size; ++y) {
    for (int x = 0; x < out_size; ++x) {
      int count = 0;
      for (int dy = 0; dy < f; ++dy) {
        for (int dx = 0; dx < f; ++dx) count += mask.at(y * f + dy, x * f + dx);
      }
      out.at(y, x) = 2 * count >= f * f ? 1 : 0;
    }
  }
  return out;
}

template Tensor<float> image_to_tensor<float>(const Image8&);
template Tensor<double> image_to_tensor<double>(const Image8&);
template Image8 tensor_to_image<float>(const Tensor<float>&);
template Image8 tensor_to_image<double>(const Tensor<double>&);
template std::vector<BinaryMask> oracle_segment<float>(const Tensor<float>&, const Palette&);
template std::vector<BinaryMask> oracle_segment<double>(const Tensor<double>&, const Palette&);

}  // namespace zestdiff
