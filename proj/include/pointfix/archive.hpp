// Single-file archive of named arrays.
//
// Layout (all integers little-endian):
//
//   bytes 0..7    magic "PFXARCH1"
//   u64           manifest length M
//   M bytes       manifest, UTF-8 JSON:
//                 {"format":1, "entries":[{"name","role","dtype","shape"}, ...],
//                  "meta":{...}}
//   then, for every manifest entry in order:
//     u32         name length L
//     L bytes     name
//     u8          dtype code (4 = float32, 8 = float64)
//     u32         rank R
//     R x u64     extents
//     N values    raw IEEE-754 little-endian, N = product of extents
//
// The manifest order is the order of the ParamSets passed to save_archive and
// the insertion order inside each set.
#pragma once

#include <pointfix/param_set.hpp>

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace pointfix {

struct ArchiveEntry {
  std::string name;
  ParamRole role = ParamRole::base;
  int dtype_bytes = 8;
  Shape shape;
  std::vector<double> values;
};

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArchiveEntry> entries;

  template <typename T>
  ParamSet<T> params(ParamRole role) const {
    ParamSet<T> out(role);
    for (const auto& e : entries)
      if (e.role == role) {
        std::vector<T> v(e.values.begin(), e.values.end());
        out.add(e.name, Tensor<T>::constant(e.shape, std::move(v)));
      }
    return out;
  }

  bool has_role(ParamRole role) const {
    for (const auto& e : entries)
      if (e.role == role) return true;
    return false;
  }
};

namespace detail {

inline constexpr char kArchiveMagic[8] = {'P', 'F', 'X', 'A', 'R', 'C', 'H', '1'};

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U)))
    throw std::runtime_error("archive: unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

}  // namespace detail

template <typename T>
void save_archive(const std::string& path, const std::vector<const ParamSet<T>*>& sets,
                  const nlohmann::json& meta = nlohmann::json::object()) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["meta"] = meta;
  manifest["entries"] = nlohmann::json::array();
  for (const auto* s : sets)
    for (const auto& [name, t] : s->entries())
      manifest["entries"].push_back({{"name", name},
                                     {"role", std::string(role_name(s->role()))},
                                     {"dtype", sizeof(T) == 4 ? "float32" : "float64"},
                                     {"shape", t.shape()}});
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("archive: cannot write " + path);
  os.write(detail::kArchiveMagic, 8);
  detail::put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* s : sets)
    for (const auto& [name, t] : s->entries()) {
      detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put_le<std::uint8_t>(os, sizeof(T));
      detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
      for (auto d : t.shape()) detail::put_le<std::uint64_t>(os, d);
      for (T v : t.values()) detail::put_le<T>(os, v);
    }
  if (!os) throw std::runtime_error("archive: write failed for " + path);
}

inline Archive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("archive: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kArchiveMagic, 8) != 0)
    throw std::runtime_error("archive: bad magic in " + path);
  const auto mlen = detail::get_le<std::uint64_t>(is);
  std::string text(mlen, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(mlen)))
    throw std::runtime_error("archive: truncated manifest");
  const auto manifest = nlohmann::json::parse(text);
  Archive ar;
  ar.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& m : manifest.at("entries")) {
    ArchiveEntry e;
    const auto nlen = detail::get_le<std::uint32_t>(is);
    e.name.resize(nlen);
    if (!is.read(e.name.data(), nlen)) throw std::runtime_error("archive: truncated name");
    if (e.name != m.at("name").get<std::string>())
      throw std::runtime_error("archive: manifest/body mismatch at " + e.name);
    e.role = role_from_name(m.at("role").get<std::string>());
    e.dtype_bytes = detail::get_le<std::uint8_t>(is);
    const auto rank = detail::get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(detail::get_le<std::uint64_t>(is));
    const std::size_t n = shape_numel(e.shape);
    e.values.resize(n);
    if (e.dtype_bytes == 4)
      for (auto& v : e.values) v = detail::get_le<float>(is);
    else if (e.dtype_bytes == 8)
      for (auto& v : e.values) v = detail::get_le<double>(is);
    else
      throw std::runtime_error("archive: unsupported dtype code");
    ar.entries.push_back(std::move(e));
  }
  return ar;
}

}  // namespace pointfix
