#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace zestdiff {

/// Record of one CLI run: enough to reproduce it and to locate its outputs.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  std::string input_hash;  // digest over the canonical config JSON and input file digests
  std::vector<std::string> outputs;
  nlohmann::json metrics = nlohmann::json::object();

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
};

/// FNV-1a digest of a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace zestdiff
