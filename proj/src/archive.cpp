#include "xmodal/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace xmodal {

namespace {

constexpr char kMagic[4] = {'X', 'M', 'T', 'A'};
constexpr uint16_t kVersion = 1;

void put_u16le(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32le(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Payloads are written little-endian; this code targets little-endian hosts.
static_assert(std::endian::native == std::endian::little,
              "archive writer assumes a little-endian host");

} // namespace

const ArchiveEntry* Archive::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const ArchiveEntry& Archive::at(const std::string& name) const {
  const ArchiveEntry* e = find(name);
  if (!e) throw std::runtime_error("archive: no tensor named '" + name + "'");
  return *e;
}

void write_tensor_archive(const std::string& path,
                          const std::vector<ArchiveEntry>& entries,
                          const nlohmann::json& header_extra) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.name).second)
      throw std::invalid_argument("archive: duplicate tensor name '" + e.name + "'");
  }

  nlohmann::json header = header_extra.is_null() ? nlohmann::json::object()
                                                 : header_extra;
  nlohmann::json table = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& e : entries) {
    size_t width = e.dtype == "f64" ? 8 : 4;
    if (e.dtype != "f64" && e.dtype != "f32")
      throw std::invalid_argument("archive: unsupported dtype '" + e.dtype + "'");
    table.push_back({{"name", e.name},
                     {"dtype", e.dtype},
                     {"shape", e.shape},
                     {"offset", offset}});
    offset += static_cast<uint64_t>(e.numel()) * width;
  }
  header["tensors"] = std::move(table);
  std::string header_str = header.dump();

  std::string buf;
  buf.append(kMagic, 4);
  put_u16le(buf, kVersion);
  put_u32le(buf, static_cast<uint32_t>(header_str.size()));
  buf += header_str;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("archive: cannot open '" + path + "' for write");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  for (const auto& e : entries) {
    if (e.dtype == "f64") {
      os.write(reinterpret_cast<const char*>(e.f64.data()),
               static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
    } else {
      os.write(reinterpret_cast<const char*>(e.f32.data()),
               static_cast<std::streamsize>(e.f32.size() * sizeof(float)));
    }
  }
  if (!os) throw std::runtime_error("archive: write failed for '" + path + "'");
}

Archive read_tensor_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("archive: cannot open '" + path + "'");
  std::string raw((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());

  if (raw.size() < 10) throw TruncatedError("archive: file shorter than header");
  if (std::memcmp(raw.data(), kMagic, 4) != 0)
    throw BadMagicError("archive: bad magic bytes in '" + path + "'");
  uint16_t version = static_cast<uint8_t>(raw[4]) |
                     (static_cast<uint16_t>(static_cast<uint8_t>(raw[5])) << 8);
  if (version != kVersion)
    throw BadVersionError("archive: unsupported version " +
                          std::to_string(version));
  uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i)
    hlen |= static_cast<uint32_t>(static_cast<uint8_t>(raw[6 + i])) << (8 * i);
  if (raw.size() < 10u + hlen)
    throw TruncatedError("archive: truncated header");

  Archive ar;
  ar.header = nlohmann::json::parse(raw.substr(10, hlen));
  size_t payload_base = 10 + hlen;
  for (const auto& t : ar.header.at("tensors")) {
    ArchiveEntry e;
    e.name = t.at("name").get<std::string>();
    e.dtype = t.at("dtype").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    uint64_t offset = t.at("offset").get<uint64_t>();
    size_t width = e.dtype == "f64" ? 8 : 4;
    size_t bytes = static_cast<size_t>(e.numel()) * width;
    if (payload_base + offset + bytes > raw.size())
      throw TruncatedError("archive: truncated payload for '" + e.name + "'");
    const char* src = raw.data() + payload_base + offset;
    if (e.dtype == "f64") {
      e.f64.resize(static_cast<size_t>(e.numel()));
      std::memcpy(e.f64.data(), src, bytes);
    } else {
      e.f32.resize(static_cast<size_t>(e.numel()));
      std::memcpy(e.f32.data(), src, bytes);
    }
    ar.entries.push_back(std::move(e));
  }
  return ar;
}

ArchiveEntry entry_from_tensor(const std::string& name, const Tensor& t) {
  ArchiveEntry e;
  e.name = name;
  e.dtype = "f64";
  e.shape = t.shape();
  e.f64 = t.data();
  return e;
}

} // namespace xmodal
