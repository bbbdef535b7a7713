#include "zestdiff/ntc.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace zestdiff {

namespace {

constexpr const char* kMetaKey = "__metadata__";

size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64" || dtype == "i64") return 8;
  if (dtype == "u8") return 1;
  throw std::invalid_argument("ntc: unknown dtype '" + dtype + "'");
}

// Payloads are little-endian; swap in place on big-endian hosts.
void to_little_endian(std::vector<std::uint8_t>& bytes, size_t width) {
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i + width <= bytes.size(); i += width) std::reverse(bytes.begin() + i, bytes.begin() + i + width);
  } else {
    (void)bytes;
    (void)width;
  }
}

template <typename V>
std::vector<std::uint8_t> pack(std::span<const V> values) {
  std::vector<std::uint8_t> out(values.size() * sizeof(V));
  if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  to_little_endian(out, sizeof(V));
  return out;
}

template <typename V>
std::vector<V> unpack(std::vector<std::uint8_t> bytes) {
  to_little_endian(bytes, sizeof(V));
  std::vector<V> out(bytes.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void check_shape(const std::string& name, const Shape& shape, size_t count) {
  if (shape_numel(shape) != static_cast<std::int64_t>(count)) {
    throw std::invalid_argument("ntc: entry '" + name + "' shape " + shape_str(shape) + " does not match " +
                                std::to_string(count) + " values");
  }
}

}  // namespace

template <typename T>
void NtcFile::put(const std::string& name, const Tensor<T>& t) {
  if (name == kMetaKey) throw std::invalid_argument("ntc: reserved entry name");
  entries_[name] = Entry{dtype_name(dtype_of<T>()), t.shape(), pack<T>(t.data())};
}

void NtcFile::put_u8(const std::string& name, Shape shape, std::span<const std::uint8_t> values) {
  check_shape(name, shape, values.size());
  entries_[name] = Entry{"u8", std::move(shape), std::vector<std::uint8_t>(values.begin(), values.end())};
}

void NtcFile::put_i64(const std::string& name, Shape shape, std::span<const std::int64_t> values) {
  check_shape(name, shape, values.size());
  entries_[name] = Entry{"i64", std::move(shape), pack<std::int64_t>(values)};
}

std::vector<std::string> NtcFile::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

const NtcFile::Entry& NtcFile::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ntc: no entry named '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T> NtcFile::get(const std::string& name) const {
  const Entry& e = entry(name);
  std::vector<T> values;
  if (e.dtype == "f32") {
    auto v = unpack<float>(e.bytes);
    values.assign(v.begin(), v.end());
  } else if (e.dtype == "f64") {
    auto v = unpack<double>(e.bytes);
    values.assign(v.begin(), v.end());
  } else {
    throw std::invalid_argument("ntc: entry '" + name + "' has non-float dtype " + e.dtype);
  }
  return Tensor<T>::from_data(e.shape, std::move(values));
}

std::vector<std::uint8_t> NtcFile::get_u8(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != "u8") throw std::invalid_argument("ntc: entry '" + name + "' is not u8");
  return e.bytes;
}

std::vector<std::int64_t> NtcFile::get_i64(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != "i64") throw std::invalid_argument("ntc: entry '" + name + "' is not i64");
  return unpack<std::int64_t>(e.bytes);
}

std::vector<std::uint8_t> NtcFile::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    header[name] = {{"dtype", e.dtype}, {"shape", e.shape}, {"byte_offset", offset}, {"byte_length", e.bytes.size()}};
    offset += e.bytes.size();
  }
  header[kMetaKey] = metadata_;
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  std::vector<std::uint8_t> out(8 + text.size() + offset);
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>((len >> (8 * i)) & 0xFF);
  std::memcpy(out.data() + 8, text.data(), text.size());
  size_t pos = 8 + text.size();
  for (const auto& [_, e] : entries_) {
    if (!e.bytes.empty()) std::memcpy(out.data() + pos, e.bytes.data(), e.bytes.size());
    pos += e.bytes.size();
  }
  return out;
}

NtcFile NtcFile::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw std::runtime_error("ntc: truncated file");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (len > bytes.size() - 8) throw std::runtime_error("ntc: header length exceeds file size");
  const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  if (!header.is_object()) throw std::runtime_error("ntc: header is not a JSON object");
  const size_t base = 8 + len;
  NtcFile file;
  for (const auto& [name, desc] : header.items()) {
    if (name == kMetaKey) {
      file.metadata_ = desc;
      continue;
    }
    Entry e;
    e.dtype = desc.at("dtype").get<std::string>();
    e.shape = desc.at("shape").get<Shape>();
    const auto off = desc.at("byte_offset").get<std::uint64_t>();
    const auto n = desc.at("byte_length").get<std::uint64_t>();
    if (base + off + n > bytes.size()) throw std::runtime_error("ntc: entry '" + name + "' exceeds file size");
    if (n != static_cast<std::uint64_t>(shape_numel(e.shape)) * dtype_size(e.dtype)) {
      throw std::runtime_error("ntc: entry '" + name + "' byte length inconsistent with shape");
    }
    e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(base + off),
                   bytes.begin() + static_cast<std::ptrdiff_t>(base + off + n));
    file.entries_[name] = std::move(e);
  }
  return file;
}

void NtcFile::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("ntc: cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("ntc: write failed for '" + path.string() + "'");
}

NtcFile NtcFile::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ntc: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

template void NtcFile::put<float>(const std::string&, const Tensor<float>&);
template void NtcFile::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> NtcFile::get<float>(const std::string&) const;
template Tensor<double> NtcFile::get<double>(const std::string&) const;

}  // namespace zestdiff
