#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lohg/error.hpp"
#include "lohg/layers.hpp"

namespace lohg {

inline constexpr char kWeightMagic[9] = "LOHGW001";  // 8 payload bytes + NUL

template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() {
  return "f32";
}
template <>
constexpr const char* dtype_name<double>() {
  return "f64";
}

namespace detail {

inline void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_value_le(std::string& out, float v) {
  auto bits = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline void put_value_le(std::string& out, double v) {
  auto bits = std::bit_cast<uint64_t>(v);
  put_u64_le(out, bits);
}

inline void get_value_le(const unsigned char* p, float& v) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
  v = std::bit_cast<float>(bits);
}

inline void get_value_le(const unsigned char* p, double& v) { v = std::bit_cast<double>(get_u64_le(p)); }

struct WeightFile {
  nlohmann::json header;
  std::vector<unsigned char> payload;
};

inline WeightFile read_weight_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kWeightMagic, 8) != 0)
    throw FormatError(path + ": not a LOHGW001 weight container");
  uint64_t len = get_u64_le(bytes.data() + 8);
  if (bytes.size() < 16 + len) throw FormatError(path + ": truncated header at byte 16");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<int64_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": malformed header JSON: " + e.what());
  }
  if (!header.is_object() || !header.contains("entries") || !header["entries"].is_array())
    throw FormatError(path + ": header lacks an \"entries\" array");
  WeightFile wf;
  wf.header = std::move(header);
  wf.payload.assign(bytes.begin() + 16 + static_cast<int64_t>(len), bytes.end());
  return wf;
}

}  // namespace detail

/// Serializes every registry parameter, in registration order, as
///   "LOHGW001" | u64 LE header length | UTF-8 JSON header | raw LE payload.
/// The header object holds "entries" ({name, dtype, shape, offset} per
/// parameter, offsets relative to the payload start) plus an optional caller
/// "config" blob that rides along with the checkpoint.
template <typename T>
void save_weights(const std::string& path, const ParamRegistry<T>& reg,
                  const nlohmann::json& config = nlohmann::json::object()) {
  nlohmann::json entries = nlohmann::json::array();
  std::string payload;
  uint64_t offset = 0;
  for (const auto& [name, p] : reg.items()) {
    nlohmann::json e;
    e["name"] = name;
    e["dtype"] = dtype_name<T>();
    e["shape"] = p.shape();
    e["offset"] = offset;
    entries.push_back(std::move(e));
    for (T v : p.data()) detail::put_value_le(payload, v);
    offset += static_cast<uint64_t>(p.numel()) * sizeof(T);
  }
  nlohmann::json header;
  header["entries"] = std::move(entries);
  if (!config.empty()) header["config"] = config;
  std::string hs = header.dump();

  std::string out;
  out.append(kWeightMagic, 8);
  detail::put_u64_le(out, hs.size());
  out += hs;
  out += payload;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError(path + ": write failed");
}

/// Reads the embedded config blob without touching the payload (empty object
/// if the file carries none).
inline nlohmann::json peek_weights_config(const std::string& path) {
  detail::WeightFile wf = detail::read_weight_file(path);
  return wf.header.value("config", nlohmann::json::object());
}

/// Loads a container into a registry with strict agreement: every registry
/// parameter must appear with matching dtype and shape, and the file may not
/// carry entries the registry does not know. Returns the embedded config.
template <typename T>
nlohmann::json load_weights(const std::string& path, ParamRegistry<T>& reg) {
  detail::WeightFile wf = detail::read_weight_file(path);
  const nlohmann::json& entries = wf.header["entries"];

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : entries) {
    if (!e.is_object() || !e.contains("name") || !e.contains("dtype") || !e.contains("shape") ||
        !e.contains("offset"))
      throw FormatError(path + ": entry missing name/dtype/shape/offset");
    by_name[e["name"].get<std::string>()] = &e;
  }
  size_t used = 0;
  for (auto& [name, p] : reg.items()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path + ": missing entry \"" + name + "\"");
    const nlohmann::json& e = *it->second;
    ++used;
    if (e["dtype"].get<std::string>() != dtype_name<T>())
      throw FormatError(path + ": dtype mismatch for \"" + name + "\"");
    Shape shape = e["shape"].get<Shape>();
    if (shape != p.shape()) throw FormatError(path + ": shape mismatch for \"" + name + "\"");
    uint64_t off = e["offset"].get<uint64_t>();
    uint64_t need = static_cast<uint64_t>(p.numel()) * sizeof(T);
    if (off + need > wf.payload.size())
      throw FormatError(path + ": payload truncated for \"" + name + "\"");
    auto d = p.mutable_data();
    for (int64_t i = 0; i < p.numel(); ++i)
      detail::get_value_le(wf.payload.data() + off + static_cast<uint64_t>(i) * sizeof(T),
                           d[static_cast<size_t>(i)]);
  }
  if (used != by_name.size())
    throw FormatError(path + ": container holds entries unknown to this model");
  return wf.header.value("config", nlohmann::json::object());
}

}  // namespace lohg
