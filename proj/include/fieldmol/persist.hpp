#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace fieldmol {

inline constexpr std::uint32_t kContainerVersion = 1;

/// Versioned tensor container (.fmol). Layout:
///   "FMOL" | version u32 LE | manifest size u64 LE | manifest JSON | payload
/// The payload holds little-endian float32 arrays, each 64-byte aligned.
/// The manifest lists tensors {shape, dtype, offset, nbytes} under "tensors"
/// plus a free-form "meta" object (hyperparameters, sigma, normalization
/// stats, field spec, ...). Unknown manifest keys survive a load/save
/// round-trip.
struct TensorContainer {
  struct Entry {
    std::vector<std::size_t> shape;
    std::vector<float> data;
  };

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Entry> tensors;  // sorted: serialization is deterministic
  nlohmann::json extra = nlohmann::json::object();  // unknown top-level manifest keys

  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

std::vector<std::uint8_t> save_container(const TensorContainer& c);
TensorContainer load_container(const std::vector<std::uint8_t>& bytes);

void save_container_file(const TensorContainer& c, const std::string& path);
TensorContainer load_container_file(const std::string& path);

}  // namespace fieldmol
