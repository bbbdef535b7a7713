#include "zestdiff/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "zestdiff/ntc.hpp"

namespace zestdiff {

namespace fs = std::filesystem;

std::vector<float> Dataset::image_chw(std::int64_t i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("dataset: index out of range");
  const std::int64_t hw = static_cast<std::int64_t>(image_size) * image_size;
  std::vector<float> out(static_cast<size_t>(3 * hw));
  const std::uint8_t* src = images.data() + i * hw * 3;
  for (std::int64_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) {
      out[static_cast<size_t>(c * hw + p)] = static_cast<float>(src[p * 3 + c] / 127.5 - 1.0);
    }
  }
  return out;
}

std::int64_t validation_count(std::int64_t n) { return n / 20; }

namespace {

DatasetSummary summary_for(std::int64_t n) {
  if (n < 1) throw std::invalid_argument("dataset: need at least one scene");
  DatasetSummary s;
  s.n_val = validation_count(n);
  s.n_train = n - s.n_val;
  if (s.n_val == 0) s.warnings.push_back("dataset of " + std::to_string(n) + " scene(s) has an empty validation split");
  return s;
}

}  // namespace

Dataset make_dataset(std::int64_t n, std::uint64_t seed, const Vocabulary& vocab, int size) {
  const auto summary = summary_for(n);
  Dataset ds;
  ds.image_size = size;
  ds.n_train = summary.n_train;
  ds.images.reserve(static_cast<size_t>(n * size * size * 3));
  for (std::int64_t i = 0; i < n; ++i) {
    const Scene scene = scene_for_index(seed, static_cast<std::uint64_t>(i), size);
    ds.images.insert(ds.images.end(), scene.image.pixels.begin(), scene.image.pixels.end());
    ds.prompts.push_back(scene.caption(vocab));
  }
  return ds;
}

DatasetSummary build_dataset(const fs::path& dir, std::int64_t n, std::uint64_t seed, const Vocabulary& vocab,
                             int size) {
  DatasetSummary summary = summary_for(n);
  std::error_code ec;
  fs::create_directories(dir / "masks", ec);
  if (ec) throw std::runtime_error("cannot create dataset directory " + dir.string() + ": " + ec.message());

  std::ofstream captions(dir / "captions.jsonl", std::ios::binary);
  if (!captions) throw std::runtime_error("cannot write " + (dir / "captions.jsonl").string());

  std::vector<std::uint8_t> pixels;
  pixels.reserve(static_cast<size_t>(n * size * size * 3));
  for (std::int64_t i = 0; i < n; ++i) {
    const Scene scene = scene_for_index(seed, static_cast<std::uint64_t>(i), size);
    summary.reseeds += scene.reseeds;
    pixels.insert(pixels.end(), scene.image.pixels.begin(), scene.image.pixels.end());

    char name[32];
    std::snprintf(name, sizeof name, "masks/%06lld.pgm", static_cast<long long>(i));
    Image8 index_map = make_image(size, size, 1);
    for (size_t k = 0; k < scene.masks.size(); ++k) {
      for (size_t p = 0; p < scene.masks[k].data.size(); ++p) {
        if (scene.masks[k].data[p]) index_map.pixels[p] = static_cast<std::uint8_t>(k + 1);
      }
    }
    write_pgm(dir / name, index_map);

    const PromptSpec prompt = scene.caption(vocab);
    nlohmann::json segs = nlohmann::json::array();
    const auto sets = scene.token_sets();
    for (size_t k = 0; k < scene.objects.size(); ++k) {
      segs.push_back({{"mask_ref", name},
                      {"mask_value", k + 1},
                      {"token_indices", sets[k]},
                      {"color", Palette::standard().objects()[static_cast<size_t>(scene.objects[k].color)].name},
                      {"shape", shape_name(scene.objects[k].shape)}});
    }
    nlohmann::json line = {{"id", i},
                           {"split", i < summary.n_train ? "train" : "val"},
                           {"text", scene.caption_text()},
                           {"tokens", prompt.tokens},
                           {"seed", scene.seed},
                           {"segments", segs}};
    captions << line.dump() << '\n';
  }
  if (!captions) throw std::runtime_error("write failed for captions.jsonl");

  NtcFile ntc;
  ntc.put_u8("images", {n, size, size, 3}, pixels);
  ntc.metadata() = {{"n", n},
                    {"n_train", summary.n_train},
                    {"n_val", summary.n_val},
                    {"seed", seed},
                    {"image_size", size},
                    {"layout", "NHWC u8"}};
  ntc.save(dir / "images.ntc");
  return summary;
}

Dataset load_dataset(const fs::path& dir, const Vocabulary& vocab) {
  if (!fs::exists(dir / "images.ntc") || !fs::exists(dir / "captions.jsonl")) {
    throw std::runtime_error("no dataset at " + dir.string() + " (expected images.ntc and captions.jsonl)");
  }
  const NtcFile ntc = NtcFile::load(dir / "images.ntc");
  Dataset ds;
  ds.image_size = ntc.metadata().at("image_size").get<int>();
  ds.n_train = ntc.metadata().at("n_train").get<std::int64_t>();
  ds.images = ntc.get_u8("images");
  std::ifstream in(dir / "captions.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PromptSpec p{j.at("tokens").get<std::vector<std::int64_t>>()};
    p.padded(vocab);  // validates ids and length
    ds.prompts.push_back(std::move(p));
  }
  const std::int64_t n = ntc.metadata().at("n").get<std::int64_t>();
  if (ds.size() != n || static_cast<std::int64_t>(ds.images.size()) != n * ds.image_size * ds.image_size * 3) {
    throw std::runtime_error("dataset at " + dir.string() + " is inconsistent");
  }
  return ds;
}

}  // namespace zestdiff
