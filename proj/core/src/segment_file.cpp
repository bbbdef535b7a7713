#include "zestdiff/segment_file.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "zestdiff/image_io.hpp"

namespace zestdiff {

namespace fs = std::filesystem;

namespace {

std::vector<int> find_run(const PromptSpec& prompt, const std::vector<std::int64_t>& words) {
  const auto& p = prompt.tokens;
  for (size_t start = 0; start + words.size() <= p.size(); ++start) {
    bool ok = true;
    for (size_t k = 0; k < words.size() && ok; ++k) ok = p[start + k] == words[k];
    if (ok) {
      std::vector<int> idx;
      for (size_t k = 0; k < words.size(); ++k) idx.push_back(static_cast<int>(start + k));
      return idx;
    }
  }
  return {};
}

BinaryMask mask_from_image(const Image8& img, int value, const std::string& name) {
  if (img.width != img.height) throw std::invalid_argument("segment mask " + name + " is not square");
  BinaryMask m = BinaryMask::empty(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int v = img.at(y, x, 0);
      m.at(y, x) = value < 0 ? (v != 0) : (v == value);
    }
  }
  return m;
}

}  // namespace

SegmentSpec load_segment_file(const fs::path& path, const PromptSpec& prompt, const Vocabulary& vocab, int resolution) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open segment file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed segment file " + path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("segments") || !j.at("segments").is_array() || j.at("segments").empty()) {
    throw std::invalid_argument("segment file needs a non-empty \"segments\" array");
  }
  SegmentSpec spec;
  spec.resolution = resolution;
  const fs::path base = path.parent_path();
  for (const auto& s : j.at("segments")) {
    const std::string mask_ref = s.at("mask").get<std::string>();
    Image8 img;
    try {
      img = read_pnm(base / mask_ref);
    } catch (const std::runtime_error& e) {
      throw std::invalid_argument("segment mask " + mask_ref + ": " + e.what());
    }
    BinaryMask mask = mask_from_image(img, s.value("value", -1), mask_ref);
    if (mask.height % resolution != 0) {
      throw std::invalid_argument("segment mask " + mask_ref + " is " + std::to_string(mask.height) +
                                  " px; need a multiple of " + std::to_string(resolution));
    }
    if (mask.height != resolution) mask = downsample_mask(mask, resolution);

    std::vector<int> tokens;
    std::string text = s.value("text", std::string());
    if (s.contains("tokens")) {
      tokens = s.at("tokens").get<std::vector<int>>();
    } else if (!text.empty()) {
      tokens = find_run(prompt, PromptSpec::encode(text, vocab).tokens);
      if (tokens.empty()) throw std::invalid_argument("segment text '" + text + "' does not occur in the prompt");
    } else {
      throw std::invalid_argument("segment " + mask_ref + " needs \"tokens\" or \"text\"");
    }
    if (text.empty()) {
      for (int t : tokens) {
        if (t < 0 || t >= static_cast<int>(prompt.tokens.size())) {
          throw std::invalid_argument("segment " + mask_ref + " references token " + std::to_string(t) +
                                      " but the prompt has " + std::to_string(prompt.tokens.size()) + " tokens");
        }
        text += (text.empty() ? "" : " ") + vocab.word(prompt.tokens[static_cast<size_t>(t)]);
      }
    }
    spec.masks.push_back(std::move(mask));
    spec.token_sets.push_back(std::move(tokens));
    spec.texts.push_back(std::move(text));
  }
  spec.validate(static_cast<int>(prompt.tokens.size()));
  return spec;
}

fs::path write_segment_file(const fs::path& dir, const Scene& scene) {
  fs::create_directories(dir);
  const auto sets = scene.token_sets();
  const auto words = scene.caption_words();
  nlohmann::json segs = nlohmann::json::array();
  for (size_t k = 0; k < scene.masks.size(); ++k) {
    const auto& m = scene.masks[k];
    Image8 img = make_image(m.width, m.height, 1);
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) img.at(y, x, 0) = m.at(y, x) ? 255 : 0;
    }
    const std::string name = "seg" + std::to_string(k) + ".pgm";
    write_pgm(dir / name, img);
    std::string text;
    for (int t : sets[k]) text += (text.empty() ? "" : " ") + words[static_cast<size_t>(t)];
    segs.push_back({{"mask", name}, {"tokens", sets[k]}, {"text", text}});
  }
  const fs::path out = dir / "segments.json";
  std::ofstream f(out);
  f << nlohmann::json{{"prompt", scene.caption_text()}, {"segments", segs}}.dump(2) << '\n';
  if (!f) throw std::runtime_error("failed to write " + out.string());
  return out;
}

}  // namespace zestdiff
