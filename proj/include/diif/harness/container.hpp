// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diif/core/mat.hpp"

namespace diif {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

constexpr uint32_t kContainerVersion = 1;

inline uint64_t fnv1a64(const void* data, size_t n,
                        uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

struct NamedArray {
  std::string name;
  Mat<float> data;
};

/// In-memory image of one file: a free-form JSON block plus named
/// float32 matrices stored in declared order.
struct Container {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  const Mat<float>& get(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a.data;
    fail("container: missing array '", name, "'");
  }
  bool has(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace detail

/// Serializes to the distribution format: magic "DIIF", u32 version,
/// u64 metadata byte length, UTF-8 JSON metadata, then the raw little-
/// endian float32 payloads back to back. The JSON records shapes,
/// dtypes, declared order, and an FNV-1a hash of the payload bytes.
inline std::string container_bytes(const Container& c) {
  std::string payload;
  nlohmann::json arrays = nlohmann::json::array();
  uint64_t hash = fnv1a64(nullptr, 0);
  for (const auto& a : c.arrays) {
    const size_t bytes = a.data.size() * sizeof(float);
    require(a.data.rows * a.data.cols == static_cast<int>(a.data.size()),
            "container: array '", a.name, "' shape mismatch");
    arrays.push_back({{"name", a.name},
                      {"rows", a.data.rows},
                      {"cols", a.data.cols},
                      {"dtype", "f32"}});
    const auto* raw = reinterpret_cast<const char*>(a.data.data.data());
    payload.append(raw, bytes);
    hash = fnv1a64(raw, bytes, hash);
  }
  nlohmann::json doc;
  doc["arrays"] = arrays;
  doc["meta"] = c.meta;
  doc["payload_hash"] = hex64(hash);
  const std::string meta = doc.dump();

  std::string out;
  out.reserve(16 + meta.size() + payload.size());
  out.append("DIIF", 4);
  detail::put_le(out, kContainerVersion);
  detail::put_le(out, static_cast<uint64_t>(meta.size()));
  out += meta;
  out += payload;
  return out;
}

inline void save_container(const std::string& path, const Container& c) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "container: cannot open '", path, "' for writing");
  const std::string bytes = container_bytes(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  require(f.good(), "container: short write to '", path, "'");
}

inline Container container_from_bytes(const std::string& bytes,
                                      const std::string& origin = "buffer") {
  require(bytes.size() >= 16, "container '", origin, "': truncated header");
  require(bytes.compare(0, 4, "DIIF") == 0, "container '", origin,
          "': bad magic");
  uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  require(version == kContainerVersion, "container '", origin,
          "': unsupported version ", version);
  uint64_t meta_len = 0;
  std::memcpy(&meta_len, bytes.data() + 8, 8);
  require(16 + meta_len <= bytes.size(), "container '", origin,
          "': metadata length ", meta_len, " exceeds file");

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.substr(16, meta_len));
  } catch (const std::exception& e) {
    fail("container '", origin, "': metadata is not valid JSON: ", e.what());
  }
  require(doc.contains("arrays") && doc["arrays"].is_array(), "container '",
          origin, "': metadata lacks an array table");

  Container c;
  c.meta = doc.value("meta", nlohmann::json::object());
  size_t off = 16 + meta_len;
  uint64_t hash = fnv1a64(nullptr, 0);
  for (const auto& e : doc["arrays"]) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    const int rows = e.at("rows").get<int>();
    const int cols = e.at("cols").get<int>();
    const std::string dtype = e.at("dtype").get<std::string>();
    require(dtype == "f32", "container '", origin, "': array '", a.name,
            "' has unsupported dtype ", dtype);
    require(rows >= 0 && cols >= 0, "container '", origin,
            "': negative shape");
    const size_t n = static_cast<size_t>(rows) * static_cast<size_t>(cols);
    require(off + n * sizeof(float) <= bytes.size(), "container '", origin,
            "': payload truncated at array '", a.name, "'");
    a.data = Mat<float>(rows, cols);
    std::memcpy(a.data.data.data(), bytes.data() + off, n * sizeof(float));
    hash = fnv1a64(bytes.data() + off, n * sizeof(float), hash);
    off += n * sizeof(float);
    c.arrays.push_back(std::move(a));
  }
  require(off == bytes.size(), "container '", origin,
          "': trailing bytes after payload");
  const std::string want = doc.value("payload_hash", "");
  require(want == hex64(hash), "container '", origin,
          "': payload hash mismatch");
  return c;
}

inline Container load_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "container: cannot open '", path, "'");
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return container_from_bytes(bytes, path);
}

}  // namespace diif
