#pragma once

#include <map>

#include "sibcl/io/binary.hpp"
#include "sibcl/nn/network.hpp"

namespace sibcl::nn {

inline constexpr std::string_view kCheckpointMagic = "SIBW";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Parameters and buffers of one or more networks, plus free-form metadata
// (architecture manifests, epoch, method).
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<StoredTensor> tensors;

  void capture(Network& net, const std::string& prefix) {
    meta["networks"][prefix] = net.manifest();
    for (const auto& p : net.parameters(prefix)) {
      const auto& v = p.var.value();
      tensors.push_back({p.name, v.shape(), std::vector<double>(v.data().begin(), v.data().end())});
    }
    for (const auto& b : net.buffers(prefix))
      tensors.push_back({b.name, Shape{b.data->size()}, std::vector<double>(b.data->begin(), b.data->end())});
  }

  // Copies stored values into `net`; every parameter and buffer must be present.
  void restore(Network& net, const std::string& prefix) const {
    std::map<std::string, const StoredTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    auto find = [&](const std::string& name, std::size_t n) -> const StoredTensor& {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw IntegrityError("checkpoint lacks tensor '" + name + "'");
      if (it->second->values.size() != n)
        throw IntegrityError("checkpoint tensor '" + name + "' has " + std::to_string(it->second->values.size()) +
                             " values, network expects " + std::to_string(n));
      return *it->second;
    };
    for (const auto& p : net.parameters(prefix)) {
      auto& v = p.var.node().value;
      const auto& src = find(p.name, v.numel());
      for (std::size_t i = 0; i < v.numel(); ++i) v[i] = static_cast<Scalar>(src.values[i]);
    }
    for (const auto& b : net.buffers(prefix)) {
      const auto& src = find(b.name, b.data->size());
      for (std::size_t i = 0; i < b.data->size(); ++i) (*b.data)[i] = static_cast<Scalar>(src.values[i]);
    }
  }

  std::string encode() const {
    nlohmann::json j;
    j["meta"] = meta;
    j["tensors"] = nlohmann::json::array();
    std::string payload;
    for (const auto& t : tensors) {
      if (shape_numel(t.shape) != t.values.size())
        throw ConfigError("checkpoint tensor '" + t.name + "' shape does not match its length");
      j["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
      payload += io::encode_f64(t.values);
    }
    j["crc32"] = io::crc32_of(payload);
    return io::pack_frame(kCheckpointMagic, kCheckpointVersion, j.dump(), payload);
  }

  static Checkpoint decode(const std::string& bytes, const std::string& what = "checkpoint") {
    auto f = io::unpack_frame(kCheckpointMagic, bytes, what);
    if (f.version != kCheckpointVersion)
      throw IntegrityError(what + ": unsupported version " + std::to_string(f.version));
    Checkpoint c;
    std::size_t offset = 0;
    try {
      const auto j = nlohmann::json::parse(f.header);
      c.meta = j.at("meta");
      std::size_t total = 0;
      for (const auto& e : j.at("tensors")) total += shape_numel(e.at("shape").get<Shape>());
      if (f.payload.size() != total * 8) throw IntegrityError(what + ": payload length does not match manifest");
      if (io::crc32_of(f.payload) != j.at("crc32").get<std::uint32_t>())
        throw IntegrityError(what + ": checksum mismatch");
      const auto* p = reinterpret_cast<const unsigned char*>(f.payload.data());
      for (const auto& e : j.at("tensors")) {
        StoredTensor t{e.at("name").get<std::string>(), e.at("shape").get<Shape>(), {}};
        t.values.resize(shape_numel(t.shape));
        for (auto& v : t.values) {
          v = io::get_f64(p + offset);
          offset += 8;
        }
        c.tensors.push_back(std::move(t));
      }
    } catch (const nlohmann::json::exception& e) {
      throw IntegrityError(what + ": malformed manifest: " + e.what());
    }
    return c;
  }

  void save(const std::string& path) const { io::write_file(path, encode()); }
  static Checkpoint load(const std::string& path) { return decode(io::read_file(path), path); }
};

}  // namespace sibcl::nn
