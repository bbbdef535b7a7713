#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "zestdiff/tensor.hpp"

namespace zestdiff {

/// Named-tensor container. Layout on disk:
///   u64 little-endian header length
///   JSON header {name: {dtype, shape, byte_offset, byte_length}, "__metadata__": {...}}
///   raw little-endian payloads, offsets relative to the end of the header
/// Entries are stored sorted by name so identical contents give identical bytes.
class NtcFile {
 public:
  struct Entry {
    std::string dtype;  // "f32", "f64", "u8", "i64"
    Shape shape;
    std::vector<std::uint8_t> bytes;
  };

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);
  void put_u8(const std::string& name, Shape shape, std::span<const std::uint8_t> values);
  void put_i64(const std::string& name, Shape shape, std::span<const std::int64_t> values);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  std::vector<std::string> names() const;
  const Entry& entry(const std::string& name) const;

  /// Reads a floating-point entry, converting between f32 and f64 if needed.
  template <typename T>
  Tensor<T> get(const std::string& name) const;
  std::vector<std::uint8_t> get_u8(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  std::vector<std::uint8_t> serialize() const;
  static NtcFile parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static NtcFile load(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

}  // namespace zestdiff
