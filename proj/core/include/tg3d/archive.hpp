#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tg3d/params.hpp"

namespace tg3d {

/// Binary archive of named float64 arrays plus a JSON metadata block.
///
/// Layout (little-endian): "TG3DARCH", u32 version, u64 json length, json
/// bytes, u64 array count, then per array: u32 name length, name, u32 rank,
/// i32 dims[rank], f64 values.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedParam> arrays;

  void add(const std::vector<NamedParam>& params, const std::string& prefix);
  /// Arrays whose names start with `prefix`, with the prefix stripped.
  std::vector<NamedParam> with_prefix(const std::string& prefix) const;
  bool has_prefix(const std::string& prefix) const;
};

/// Writes to a sibling temporary file, then renames over `path`.
void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// FNV-1a of the file bytes, as 16 hex digits.
std::string content_hash(const std::filesystem::path& path);

}  // namespace tg3d
