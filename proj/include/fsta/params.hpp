#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsta/tensor.hpp"

namespace fsta {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

/// Ordered map from parameter name to tensor. Insertion order is the
/// canonical order for initialization, optimizer state, and serialization;
/// names are unique and shapes immutable after insertion.
class ParameterStore {
 public:
  void insert(const std::string& name, Tensor value) {
    if (index_.count(name)) {
      throw ValueError("duplicate parameter name: " + name);
    }
    index_.emplace(name, names_.size());
    names_.push_back(name);
    values_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("unknown parameter: " + name);
    return values_[it->second];
  }

  /// Mutable element access; the shape itself must not be changed.
  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("unknown parameter: " + name);
    return values_[it->second];
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name_at(std::size_t i) const { return names_.at(i); }
  const Tensor& value_at(std::size_t i) const { return values_.at(i); }
  Tensor& value_at(std::size_t i) { return values_.at(i); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------
// Layout: magic "FSTA1\n", one line of JSON header terminated by '\n', then
// the concatenated little-endian float64 payloads. Header:
//   {"config": <caller blob>, "parameters": [{"name","shape","offset"}, ...]}
// with offset counted in bytes from the start of the payload section.

inline constexpr const char* kCheckpointMagic = "FSTA1\n";

struct Checkpoint {
  nlohmann::json config;
  ParameterStore params;
};

inline void save_checkpoint(const std::string& path,
                            const nlohmann::json& config,
                            const ParameterStore& params) {
  nlohmann::json header;
  header["config"] = config;
  nlohmann::json plist = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.value_at(i);
    nlohmann::json entry;
    entry["name"] = params.name_at(i);
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    plist.push_back(std::move(entry));
    offset += t.numel() * sizeof(double);
  }
  header["parameters"] = std::move(plist);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os << kCheckpointMagic;
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.value_at(i);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("write failed for checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::string magic(6, '\0');
  is.read(magic.data(), 6);
  if (!is || magic != kCheckpointMagic) {
    throw IoError("bad checkpoint magic in " + path);
  }
  std::string header_line;
  if (!std::getline(is, header_line)) {
    throw IoError("truncated checkpoint header in " + path);
  }
  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded()) {
    throw IoError("unparsable checkpoint header in " + path);
  }
  Checkpoint ck;
  ck.config = header.at("config");
  for (const auto& entry : header.at("parameters")) {
    const std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t{shape};
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) {
      throw IoError("truncated payload for parameter " + name + " in " + path);
    }
    ck.params.insert(name, std::move(t));
  }
  return ck;
}

}  // namespace fsta
