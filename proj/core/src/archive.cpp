#include "tg3d/archive.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace tg3d {

namespace {
constexpr char kMagic[8] = {'T', 'G', '3', 'D', 'A', 'R', 'C', 'H'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error(fmt::format("'{}': truncated archive", path.string()));
  return v;
}
}  // namespace

void Archive::add(const std::vector<NamedParam>& params, const std::string& prefix) {
  for (const auto& p : params) arrays.push_back({prefix + p.name, p.tensor});
}

std::vector<NamedParam> Archive::with_prefix(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (const auto& a : arrays)
    if (a.name.rfind(prefix, 0) == 0) out.push_back({a.name.substr(prefix.size()), a.tensor});
  return out;
}

bool Archive::has_prefix(const std::string& prefix) const {
  for (const auto& a : arrays)
    if (a.name.rfind(prefix, 0) == 0) return true;
  return false;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
    out.write(kMagic, sizeof(kMagic));
    put<uint32_t>(out, kVersion);
    const std::string meta = archive.meta.dump();
    put<uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<uint64_t>(out, archive.arrays.size());
    for (const auto& a : archive.arrays) {
      put<uint32_t>(out, static_cast<uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<uint32_t>(out, static_cast<uint32_t>(a.tensor.rank()));
      for (int d : a.tensor.shape()) put<int32_t>(out, d);
      const auto& v = a.tensor.data();
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error(fmt::format("failed writing '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(fmt::format("'{}' is not a tg3d archive", path.string()));
  }
  if (get<uint32_t>(in, path) != kVersion) throw std::runtime_error(fmt::format("'{}': unsupported version", path.string()));
  Archive archive;
  const auto meta_len = get<uint64_t>(in, path);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  archive.meta = nlohmann::json::parse(meta);
  const auto count = get<uint64_t>(in, path);
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = get<uint32_t>(in, path);
    if (rank > 8) throw std::runtime_error(fmt::format("'{}': corrupt array header", path.string()));
    Shape shape(rank);
    for (auto& d : shape) d = get<int32_t>(in, path);
    std::vector<double> values(static_cast<size_t>(numel(shape)));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw std::runtime_error(fmt::format("'{}': truncated array '{}'", path.string(), name));
    archive.arrays.push_back({std::move(name), Tensor::from(shape, std::move(values))});
  }
  return archive;
}

std::string content_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fmt::format("{:016x}", fnv1a(bytes));
}

}  // namespace tg3d
