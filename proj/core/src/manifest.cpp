#include "zestdiff/manifest.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

#include "zestdiff/checkpoint.hpp"

namespace zestdiff {

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},        {"config", config},   {"seed", seed},
          {"checkpoint_hash", checkpoint_hash}, {"input_hash", input_hash}, {"outputs", outputs},
          {"metrics", metrics}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.value("config", nlohmann::json::object());
  m.seed = j.value("seed", std::uint64_t{0});
  m.checkpoint_hash = j.value("checkpoint_hash", std::string());
  m.input_hash = j.value("input_hash", std::string());
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.metrics = j.value("metrics", nlohmann::json::object());
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace zestdiff
