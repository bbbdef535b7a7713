#include "common.hpp"

namespace zestdiff::cli {

namespace fs = std::filesystem;

Checkpoint load_checkpoint_or_fail(const std::string& path) {
  if (path.empty()) throw InputError("--checkpoint is required");
  if (!fs::exists(path)) throw InputError("checkpoint not found: " + path);
  try {
    return Checkpoint::load(path);
  } catch (const std::exception& e) {
    throw InputError("cannot load checkpoint " + path + ": " + e.what());
  }
}

std::string inputs_hash(const nlohmann::json& config, const std::vector<fs::path>& files) {
  std::string acc = config.dump();
  for (const auto& f : files) acc += file_hash(f);
  return fnv1a_hex(acc);
}

fs::path output_path(const std::string& prefix, const std::string& suffix) {
  fs::path p = prefix + suffix;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

}  // namespace zestdiff::cli
