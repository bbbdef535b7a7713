#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "commands.hpp"
#include "zestdiff/checkpoint.hpp"
#include "zestdiff/manifest.hpp"

namespace zestdiff::cli {

Checkpoint load_checkpoint_or_fail(const std::string& path);

/// Digest over the canonical config and the digests of the input files.
std::string inputs_hash(const nlohmann::json& config, const std::vector<std::filesystem::path>& files);

/// `<prefix><suffix>`, creating the parent directory.
std::filesystem::path output_path(const std::string& prefix, const std::string& suffix);

}  // namespace zestdiff::cli
