#include "fieldmol/persist.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

#include "fieldmol/error.hpp"

namespace fieldmol {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'O', 'L'};
constexpr std::size_t kAlign = 64;
constexpr std::size_t kHeaderSize = 4 + 4 + 8;

std::size_t aligned_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::size_t checked_numel(const std::vector<std::size_t>& shape, const std::string& name) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d)
      throw PersistError(PersistErrc::kShapeMismatch, "tensor '" + name + "': shape overflows");
    n *= d;
  }
  return n;
}

}  // namespace

TensorContainer::Entry& TensorContainer::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw PersistError(PersistErrc::kBadManifest, "missing tensor '" + name + "'");
  return it->second;
}

const TensorContainer::Entry& TensorContainer::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw PersistError(PersistErrc::kBadManifest, "missing tensor '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> save_container(const TensorContainer& c) {
  // Lay out payload offsets first (file-absolute, 64-byte aligned); the
  // manifest length feeds back into them, so resolve with a fixed point over
  // the manifest size.
  nlohmann::json manifest = c.extra;
  manifest["version"] = kContainerVersion;
  manifest["meta"] = c.meta;

  std::string manifest_str;
  std::size_t payload_start = 0;
  for (int pass = 0; pass < 8; ++pass) {
    nlohmann::json tensors = nlohmann::json::object();
    std::size_t cursor = payload_start;
    for (const auto& [name, entry] : c.tensors) {
      const std::size_t numel = checked_numel(entry.shape, name);
      if (numel != entry.data.size())
        throw PersistError(PersistErrc::kShapeMismatch,
                           "tensor '" + name + "': shape does not match data size");
      cursor = aligned_up(cursor);
      nlohmann::json t;
      t["dtype"] = "f32";
      t["shape"] = entry.shape;
      t["offset"] = cursor;
      t["nbytes"] = numel * 4;
      tensors[name] = std::move(t);
      cursor += numel * 4;
    }
    manifest["tensors"] = std::move(tensors);
    manifest_str = manifest.dump();
    const std::size_t start = aligned_up(kHeaderSize + manifest_str.size());
    if (start == payload_start) break;
    payload_start = start;
  }

  std::vector<std::uint8_t> out;
  out.reserve(payload_start);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kContainerVersion);
  put_u64(out, manifest_str.size());
  out.insert(out.end(), manifest_str.begin(), manifest_str.end());
  out.resize(payload_start, 0);
  for (const auto& [name, entry] : c.tensors) {
    out.resize(aligned_up(out.size()), 0);
    const std::size_t pos = out.size();
    out.resize(pos + entry.data.size() * 4);
    static_assert(sizeof(float) == 4);
    std::memcpy(out.data() + pos, entry.data.data(), entry.data.size() * 4);
  }
  return out;
}

TensorContainer load_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderSize)
    throw PersistError(PersistErrc::kBadMagic, "file too small for header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw PersistError(PersistErrc::kBadMagic, "bad magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version > kContainerVersion)
    throw PersistError(PersistErrc::kVersionTooNew,
                       "container version " + std::to_string(version) + " is newer than " +
                           std::to_string(kContainerVersion));
  const std::uint64_t manifest_len = get_u64(bytes.data() + 8);
  if (manifest_len > bytes.size() - kHeaderSize)
    throw PersistError(PersistErrc::kOffsetOverflow, "manifest extends past end of file");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kHeaderSize,
                                     bytes.begin() + kHeaderSize + manifest_len);
  } catch (const nlohmann::json::exception& e) {
    throw PersistError(PersistErrc::kBadManifest, std::string("manifest parse: ") + e.what());
  }
  if (!manifest.is_object())
    throw PersistError(PersistErrc::kBadManifest, "manifest is not an object");

  TensorContainer c;
  c.meta = manifest.value("meta", nlohmann::json::object());
  for (auto it = manifest.begin(); it != manifest.end(); ++it) {
    if (it.key() != "meta" && it.key() != "tensors" && it.key() != "version")
      c.extra[it.key()] = it.value();
  }

  const auto tensors_it = manifest.find("tensors");
  if (tensors_it == manifest.end()) return c;
  if (!tensors_it->is_object())
    throw PersistError(PersistErrc::kBadManifest, "'tensors' is not an object");

  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (auto it = tensors_it->begin(); it != tensors_it->end(); ++it) {
    const std::string& name = it.key();
    const nlohmann::json& t = it.value();
    if (!t.is_object() || !t.contains("dtype") || !t.contains("shape") || !t.contains("offset") ||
        !t.contains("nbytes"))
      throw PersistError(PersistErrc::kBadManifest, "tensor '" + name + "': incomplete record");
    if (t["dtype"] != "f32")
      throw PersistError(PersistErrc::kBadManifest,
                         "tensor '" + name + "': unsupported dtype");
    if (!t["shape"].is_array() || !t["offset"].is_number_unsigned() ||
        !t["nbytes"].is_number_unsigned())
      throw PersistError(PersistErrc::kBadManifest, "tensor '" + name + "': malformed record");

    TensorContainer::Entry entry;
    for (const auto& d : t["shape"]) {
      if (!d.is_number_unsigned())
        throw PersistError(PersistErrc::kBadManifest, "tensor '" + name + "': malformed shape");
      entry.shape.push_back(d.get<std::size_t>());
    }
    const std::size_t numel = checked_numel(entry.shape, name);
    const std::uint64_t nbytes = t["nbytes"].get<std::uint64_t>();
    if (numel > std::numeric_limits<std::size_t>::max() / 4 || nbytes != numel * 4)
      throw PersistError(PersistErrc::kShapeMismatch,
                         "tensor '" + name + "': nbytes does not match shape");
    const std::uint64_t offset = t["offset"].get<std::uint64_t>();
    if (offset > bytes.size() || nbytes > bytes.size() - offset)
      throw PersistError(PersistErrc::kOffsetOverflow,
                         "tensor '" + name + "': data extends past end of file");
    spans.emplace_back(offset, offset + nbytes);

    entry.data.resize(numel);
    std::memcpy(entry.data.data(), bytes.data() + offset, nbytes);
    c.tensors.emplace(name, std::move(entry));
  }

  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].second)
      throw PersistError(PersistErrc::kOffsetOverflow, "overlapping tensor payloads");

  return c;
}

void save_container_file(const TensorContainer& c, const std::string& path) {
  const auto bytes = save_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw PersistError(PersistErrc::kIo, "cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw PersistError(PersistErrc::kIo, "write failed for '" + path + "'");
}

TensorContainer load_container_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PersistError(PersistErrc::kIo, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return load_container(bytes);
}

}  // namespace fieldmol
