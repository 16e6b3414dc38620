// On-disk sequence layout:
//
//   <root>/seq_<id>/left_%06d.png    8-bit RGB
//   <root>/seq_<id>/right_%06d.png   8-bit RGB
//   <root>/seq_<id>/disp_%06d.png    16-bit gray, 0 = invalid, d = value / 256
//   <root>/seq_<id>/meta.json        {"id","environment","frames","height","width","style"}
#pragma once

#include <pointfix/image_io.hpp>
#include <pointfix/scene.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace pointfix {

inline void to_json(nlohmann::json& j, const DomainStyle& s) {
  j = {{"brightness", s.brightness},   {"contrast", s.contrast},
       {"color_gain", s.color_gain},   {"noise_sigma", s.noise_sigma},
       {"texture_family", s.texture_family}, {"fog_alpha", s.fog_alpha}};
}
inline void from_json(const nlohmann::json& j, DomainStyle& s) {
  DomainStyle d;
  s.brightness = j.value("brightness", d.brightness);
  s.contrast = j.value("contrast", d.contrast);
  s.color_gain = j.value("color_gain", d.color_gain);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.texture_family = j.value("texture_family", d.texture_family);
  s.fog_alpha = j.value("fog_alpha", d.fog_alpha);
  s.validate();
}

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"height", c.height},           {"width", c.width},
       {"d_max", c.d_max},             {"bg_disp_min", c.bg_disp_min},
       {"bg_disp_max", c.bg_disp_max}, {"obj_disp_min", c.obj_disp_min},
       {"objects_min", c.objects_min}, {"objects_max", c.objects_max},
       {"size_min", c.size_min},       {"size_max", c.size_max},
       {"max_drift", c.max_drift},     {"integer_disparity", c.integer_disparity},
       {"planar_slant", c.planar_slant}, {"slant_max", c.slant_max}};
}
inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.d_max = j.value("d_max", d.d_max);
  c.bg_disp_min = j.value("bg_disp_min", d.bg_disp_min);
  c.bg_disp_max = j.value("bg_disp_max", d.bg_disp_max);
  c.obj_disp_min = j.value("obj_disp_min", d.obj_disp_min);
  c.objects_min = j.value("objects_min", d.objects_min);
  c.objects_max = j.value("objects_max", d.objects_max);
  c.size_min = j.value("size_min", d.size_min);
  c.size_max = j.value("size_max", d.size_max);
  c.max_drift = j.value("max_drift", d.max_drift);
  c.integer_disparity = j.value("integer_disparity", d.integer_disparity);
  c.planar_slant = j.value("planar_slant", d.planar_slant);
  c.slant_max = j.value("slant_max", d.slant_max);
}

namespace detail {
inline std::string frame_name(const char* kind, std::size_t t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06zu.png", kind, t);
  return buf;
}
}  // namespace detail

inline std::filesystem::path sequence_dir(const std::filesystem::path& root, const std::string& id) {
  return root / ("seq_" + id);
}

template <typename T>
void export_sequence(const std::filesystem::path& root, const Sequence<T>& seq) {
  if (seq.frames.empty()) throw std::invalid_argument("export_sequence: empty sequence");
  const auto dir = sequence_dir(root, seq.id);
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& f = seq.frames[t];
    write_rgb_png((dir / detail::frame_name("left", t)).string(), f.left);
    write_rgb_png((dir / detail::frame_name("right", t)).string(), f.right);
    write_disparity_png((dir / detail::frame_name("disp", t)).string(), f.gt_disparity, &f.valid_mask);
  }
  nlohmann::json meta = {{"id", seq.id},
                         {"environment", seq.environment},
                         {"frames", seq.frames.size()},
                         {"height", seq.frames[0].height()},
                         {"width", seq.frames[0].width()},
                         {"style", seq.domain}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

template <typename T>
Sequence<T> import_sequence(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw std::runtime_error("import_sequence: missing " + (dir / "meta.json").string());
  const auto meta = nlohmann::json::parse(in);
  Sequence<T> seq;
  seq.id = meta.at("id").get<std::string>();
  seq.environment = meta.value("environment", std::string{});
  seq.domain = meta.value("style", DomainStyle{});
  const std::size_t n = meta.at("frames").get<std::size_t>();
  for (std::size_t t = 0; t < n; ++t) {
    StereoFrame<T> f;
    f.left = read_rgb_png<T>((dir / detail::frame_name("left", t)).string());
    f.right = read_rgb_png<T>((dir / detail::frame_name("right", t)).string());
    std::tie(f.gt_disparity, f.valid_mask) = read_disparity_png<T>((dir / detail::frame_name("disp", t)).string());
    if (f.left.shape() != f.right.shape() || f.gt_disparity.dim(0) != f.left.dim(0) ||
        f.gt_disparity.dim(1) != f.left.dim(1))
      throw std::runtime_error("import_sequence: inconsistent frame sizes in " + dir.string());
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

}  // namespace pointfix
