#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/tensor.hpp"

namespace xmodal {

// Tensor-archive file ("XMTA"): magic bytes, u16 LE version = 1, u32 LE
// header length, UTF-8 JSON header, contiguous little-endian payloads.

struct BadMagicError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadVersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncatedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArchiveEntry {
  std::string name;
  std::string dtype; // "f64" | "f32"
  Shape shape;
  std::vector<double> f64;
  std::vector<float> f32;

  int64_t numel() const { return shape_numel(shape); }
};

struct Archive {
  nlohmann::json header; // full header including the tensor table
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(const std::string& name) const;
  const ArchiveEntry& at(const std::string& name) const;
};

void write_tensor_archive(const std::string& path,
                          const std::vector<ArchiveEntry>& entries,
                          const nlohmann::json& header_extra = {});
Archive read_tensor_archive(const std::string& path);

ArchiveEntry entry_from_tensor(const std::string& name, const Tensor& t);

} // namespace xmodal
