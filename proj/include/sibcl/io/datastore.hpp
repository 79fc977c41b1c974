#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "sibcl/io/binary.hpp"

namespace sibcl::io {

inline constexpr std::string_view kDatasetMagic = "SIBD";
inline constexpr std::uint16_t kDatasetVersion = 1;

struct DatasetHeader {
  std::string kind;
  std::vector<std::size_t> shape;  // per record
  std::size_t count = 0;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json units = nlohmann::json::object();

  std::size_t record_size() const {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
  }

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

// Records of one kind stored contiguously as f64.
struct Dataset {
  DatasetHeader header;
  std::vector<double> data;

  std::size_t count() const noexcept { return header.count; }
  std::span<const double> record(std::size_t i) const {
    const std::size_t r = header.record_size();
    return std::span<const double>(data).subspan(i * r, r);
  }
  void push(std::span<const double> rec) {
    if (rec.size() != header.record_size())
      throw ConfigError("record of length " + std::to_string(rec.size()) + " does not fit kind '" + header.kind + "'");
    data.insert(data.end(), rec.begin(), rec.end());
    ++header.count;
  }
};

inline std::string encode_dataset(const Dataset& ds) {
  const auto& h = ds.header;
  if (h.shape.empty()) throw ConfigError("dataset '" + h.kind + "' has no record shape");
  if (ds.data.size() != h.count * h.record_size())
    throw ConfigError("dataset '" + h.kind + "': " + std::to_string(ds.data.size()) + " values for " +
                      std::to_string(h.count) + " records of " + std::to_string(h.record_size()));
  const std::string payload = encode_f64(ds.data);
  nlohmann::json j = {{"kind", h.kind},   {"dtype", "f64"},    {"shape", h.shape},
                      {"count", h.count}, {"seed", h.seed},    {"params", h.params},
                      {"units", h.units}, {"crc32", crc32_of(payload)}};
  return pack_frame(kDatasetMagic, kDatasetVersion, j.dump(), payload);
}

inline Dataset decode_dataset(const std::string& bytes, const std::string& what = "dataset") {
  Frame f = unpack_frame(kDatasetMagic, bytes, what);
  if (f.version != kDatasetVersion)
    throw IntegrityError(what + ": unsupported version " + std::to_string(f.version));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f.header);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(what + ": unreadable header: " + e.what());
  }
  Dataset ds;
  try {
    if (j.at("dtype") != "f64") throw IntegrityError(what + ": unsupported dtype " + j.at("dtype").dump());
    ds.header.kind = j.at("kind").get<std::string>();
    ds.header.shape = j.at("shape").get<std::vector<std::size_t>>();
    ds.header.count = j.at("count").get<std::size_t>();
    ds.header.seed = j.at("seed").get<std::uint64_t>();
    ds.header.params = j.at("params");
    ds.header.units = j.at("units");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(what + ": malformed header: " + e.what());
  }
  const std::size_t expect = ds.header.count * ds.header.record_size() * 8;
  if (f.payload.size() != expect)
    throw IntegrityError(what + ": payload is " + std::to_string(f.payload.size()) + " bytes, header implies " +
                         std::to_string(expect));
  if (crc32_of(f.payload) != j.at("crc32").get<std::uint32_t>()) throw IntegrityError(what + ": checksum mismatch");
  ds.data.resize(ds.header.count * ds.header.record_size());
  const auto* p = reinterpret_cast<const unsigned char*>(f.payload.data());
  for (std::size_t i = 0; i < ds.data.size(); ++i) ds.data[i] = get_f64(p + 8 * i);
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) { write_file(path, encode_dataset(ds)); }

inline Dataset read_dataset(const std::string& path) { return decode_dataset(read_file(path), path); }

inline Dataset read_dataset(const std::string& path, const std::string& expected_kind) {
  Dataset ds = read_dataset(path);
  if (ds.header.kind != expected_kind)
    throw ConfigError(path + ": expected kind '" + expected_kind + "', found '" + ds.header.kind + "'");
  return ds;
}

}  // namespace sibcl::io
