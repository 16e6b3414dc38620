// Synthetic rectified stereo sequences with dense ground-truth disparity.
//
// Geometry (SceneSpec) and appearance (DomainStyle) are sampled separately so
// that source and target domains can share a geometry distribution while
// differing in texture statistics, photometry and noise.
#pragma once

#include <pointfix/tensor.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace pointfix {

struct GeneratorConfig {
  std::size_t height = 64;
  std::size_t width = 128;
  double d_max = 24.0;
  double bg_disp_min = 1.0;
  double bg_disp_max = 4.0;
  double obj_disp_min = 5.0;
  std::size_t objects_min = 2;
  std::size_t objects_max = 5;
  double size_min = 8.0;     ///< half-extent range of objects, px
  double size_max = 28.0;
  double max_drift = 1.0;    ///< per-object speed bound, px/frame
  bool integer_disparity = true;
  bool planar_slant = false;
  double slant_max = 0.04;   ///< |d disparity / d x| for slanted objects
};

enum class ShapeKind { rectangle, ellipse };

struct SceneObject {
  ShapeKind shape = ShapeKind::rectangle;
  double cx = 0, cy = 0;        ///< centre at t = 0, left-image px
  double half_w = 1, half_h = 1;
  double disparity = 0;         ///< at the centre column
  double slant = 0;             ///< disparity change per px along x
  std::uint64_t texture_seed = 0;
  double vx = 0, vy = 0;        ///< drift, px/frame

  double bound_w = 0, bound_h = 0;  ///< frame extent the centre bounces inside (0: unbounded)

  double cx_at(int t) const { return reflect(cx + vx * t, bound_w); }
  double cy_at(int t) const { return reflect(cy + vy * t, bound_h); }
  static double reflect(double p, double extent) {
    if (extent <= 0) return p;
    const double m = std::fmod(p, 2 * extent);
    const double q = m < 0 ? m + 2 * extent : m;
    return q <= extent ? q : 2 * extent - q;
  }
  bool covers(double y, double x, int t) const {
    const double dx = (x - cx_at(t)) / half_w, dy = (y - cy_at(t)) / half_h;
    if (shape == ShapeKind::rectangle) return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
    return dx * dx + dy * dy <= 1.0;
  }
  double disparity_at(double x, int t) const { return disparity + slant * (x - cx_at(t)); }
};

struct SceneSpec {
  std::size_t height = 0, width = 0;
  double d_max = 0;
  double background_disparity = 1;
  std::uint64_t background_seed = 0;
  std::vector<SceneObject> objects;  ///< sorted nearest first
};

struct DomainStyle {
  double brightness = 0.0;
  double contrast = 1.0;
  std::array<double, 3> color_gain{1.0, 1.0, 1.0};
  double noise_sigma = 0.01;  ///< std of the left-right photometric discrepancy
  int texture_family = 0;     ///< 0 smooth value noise, 1 gratings, 2 blocky cells
  double fog_alpha = 0.0;

  void validate() const {
    if (contrast <= 0) throw std::invalid_argument("DomainStyle: contrast must be > 0");
    for (double g : color_gain)
      if (g <= 0) throw std::invalid_argument("DomainStyle: color gains must be > 0");
    if (fog_alpha < 0 || fog_alpha > 1) throw std::invalid_argument("DomainStyle: fog alpha outside [0,1]");
    if (noise_sigma < 0) throw std::invalid_argument("DomainStyle: negative noise");
    if (texture_family < 0 || texture_family > 2)
      throw std::invalid_argument("DomainStyle: unknown texture family");
  }

  static DomainStyle identity() {
    DomainStyle s;
    s.noise_sigma = 0.0;
    return s;
  }
  /// Default source domain.
  static DomainStyle source() { return DomainStyle{}; }
  /// Default shifted target domain.
  static DomainStyle target() {
    DomainStyle s;
    s.brightness = 0.08;
    s.contrast = 0.65;
    s.color_gain = {1.1, 0.95, 0.8};
    s.noise_sigma = 0.02;
    s.texture_family = 2;
    s.fog_alpha = 0.2;
    return s;
  }
};

template <typename T>
struct StereoFrame {
  Tensor<T> left;          ///< [H,W,3] in [0,1]
  Tensor<T> right;         ///< [H,W,3] in [0,1]
  Tensor<T> gt_disparity;  ///< [H,W] px
  Tensor<T> valid_mask;    ///< [H,W] in {0,1}

  std::size_t height() const { return left.dim(0); }
  std::size_t width() const { return left.dim(1); }

  template <typename U>
  StereoFrame<U> cast() const {
    return {left.template cast<U>(), right.template cast<U>(), gt_disparity.template cast<U>(),
            valid_mask.template cast<U>()};
  }
};

template <typename T>
struct Sequence {
  std::vector<StereoFrame<T>> frames;
  DomainStyle domain;
  std::string environment;
  std::string id;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline double hash_unit(std::uint64_t seed, std::int64_t a, std::int64_t b, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(a) * 0x632BE59BD9B4E019ull ^
                                                 splitmix64(static_cast<std::uint64_t>(b) + 0x85157AF5ull + c)));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

inline double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

inline double value_noise(std::uint64_t seed, double u, double v, double cell, std::uint64_t ch) {
  const double fu = u / cell, fv = v / cell;
  const double iu = std::floor(fu), iv = std::floor(fv);
  const double tu = smooth(fu - iu), tv = smooth(fv - iv);
  const auto a = static_cast<std::int64_t>(iu), b = static_cast<std::int64_t>(iv);
  const double v00 = hash_unit(seed, a, b, ch), v10 = hash_unit(seed, a + 1, b, ch);
  const double v01 = hash_unit(seed, a, b + 1, ch), v11 = hash_unit(seed, a + 1, b + 1, ch);
  return (v00 * (1 - tu) + v10 * tu) * (1 - tv) + (v01 * (1 - tu) + v11 * tu) * tv;
}

/// Surface texture at surface-local coordinates (v = row, u = column).
inline std::array<double, 3> texture(int family, std::uint64_t seed, double v, double u) {
  std::array<double, 3> c{};
  switch (family) {
    case 0:
      for (std::uint64_t ch = 0; ch < 3; ++ch)
        c[ch] = 0.6 * value_noise(seed, u, v, 7.0, ch) + 0.4 * value_noise(seed + 17, u, v, 3.0, ch);
      break;
    case 1: {
      double s = 0;
      for (int k = 0; k < 3; ++k) {
        const double ang = hash_unit(seed, k, 1) * 3.14159265358979;
        const double period = 4.0 + 8.0 * hash_unit(seed, k, 2);
        const double phase = hash_unit(seed, k, 3) * 6.2831853;
        s += std::sin((std::cos(ang) * u + std::sin(ang) * v) * 6.2831853 / period + phase);
      }
      const double base = 0.5 + s / 6.0;
      for (std::uint64_t ch = 0; ch < 3; ++ch)
        c[ch] = std::clamp(base * (0.7 + 0.6 * hash_unit(seed, 7, 7, ch)), 0.0, 1.0);
      break;
    }
    default: {
      const double cell = 3.0 + 3.0 * hash_unit(seed, 11, 11);
      const auto a = static_cast<std::int64_t>(std::floor(u / cell));
      const auto b = static_cast<std::int64_t>(std::floor(v / cell));
      for (std::uint64_t ch = 0; ch < 3; ++ch)
        c[ch] = 0.75 * hash_unit(seed, a, b, ch) + 0.25 * value_noise(seed + 5, u, v, 2.0, ch);
      break;
    }
  }
  return c;
}

inline double apply_style(const DomainStyle& s, double c, std::size_t ch) {
  double x = ((c - 0.5) * s.contrast + 0.5 + s.brightness) * s.color_gain[ch];
  x = (1.0 - s.fog_alpha) * x + s.fog_alpha * 0.75;
  return std::clamp(x, 0.0, 1.0);
}

}  // namespace detail

inline SceneSpec make_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
  if (cfg.d_max < 1) throw std::invalid_argument("make_scene: d_max must be >= 1");
  if (cfg.height == 0 || cfg.width == 0) throw std::invalid_argument("make_scene: empty image");
  if (cfg.objects_max < cfg.objects_min) throw std::invalid_argument("make_scene: bad object range");
  if (cfg.bg_disp_max > cfg.d_max || cfg.bg_disp_min < 0 || cfg.bg_disp_min > cfg.bg_disp_max)
    throw std::invalid_argument("make_scene: bad background disparity range");
  std::mt19937_64 rng(detail::splitmix64(seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };
  auto quant = [&](double d) { return cfg.integer_disparity ? std::round(d) : d; };

  SceneSpec s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.d_max = cfg.d_max;
  s.background_disparity = quant(uniform(cfg.bg_disp_min, cfg.bg_disp_max));
  s.background_seed = rng();
  const std::size_t n =
      cfg.objects_min + static_cast<std::size_t>(u01(rng) * double(cfg.objects_max - cfg.objects_min + 1));
  const std::size_t count = std::min(n, cfg.objects_max);
  const double lo = std::max(cfg.obj_disp_min, s.background_disparity + 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    SceneObject o;
    o.shape = u01(rng) < 0.5 ? ShapeKind::rectangle : ShapeKind::ellipse;
    o.half_w = uniform(cfg.size_min, cfg.size_max);
    o.half_h = uniform(cfg.size_min, cfg.size_max) * 0.6;
    o.cx = uniform(0.0, double(cfg.width));
    o.cy = uniform(0.0, double(cfg.height));
    o.disparity = std::clamp(quant(uniform(lo, cfg.d_max)), lo, cfg.d_max);
    o.texture_seed = rng();
    const double speed = uniform(0.0, cfg.max_drift);
    const double ang = uniform(0.0, 6.283185307179586);
    o.vx = speed * std::cos(ang);
    o.vy = speed * std::sin(ang) * 0.3;
    o.bound_w = double(cfg.width);
    o.bound_h = double(cfg.height);
    if (cfg.planar_slant) {
      o.slant = uniform(-cfg.slant_max, cfg.slant_max);
      // Keep the slanted plane inside (background, d_max] over its extent.
      const double span = std::abs(o.slant) * o.half_w;
      o.disparity = std::clamp(o.disparity, lo + span, std::max(lo + span, cfg.d_max - span));
    }
    s.objects.push_back(o);
  }
  std::stable_sort(s.objects.begin(), s.objects.end(),
                   [](const SceneObject& a, const SceneObject& b) { return a.disparity > b.disparity; });
  return s;
}

namespace detail {

// Index of the nearest object covering left-image column x (row y), or -1 for
// the background. `objects` are sorted nearest first, and with slant the
// nearest is chosen by local disparity.
inline int left_surface(const SceneSpec& s, double y, double x, int t, double& disp) {
  int best = -1;
  disp = s.background_disparity;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    if (!o.covers(y, x, t)) continue;
    const double d = o.disparity_at(x, t);
    if (best < 0 || d > disp) {
      best = int(i);
      disp = d;
    }
  }
  return best;
}

// Surface seen by the right camera at column xr: the nearest surface whose
// left-image point xl satisfies xl - d(xl) = xr.
inline int right_surface(const SceneSpec& s, double y, double xr, int t, double& xl_out) {
  int best = -1;
  double best_d = s.background_disparity;
  xl_out = xr + s.background_disparity;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    // d(xl) = d0 + a (xl - c)  =>  xl = (xr + d0 - a c) / (1 - a)
    const double xl = (xr + o.disparity - o.slant * o.cx_at(t)) / (1.0 - o.slant);
    if (!o.covers(y, xl, t)) continue;
    const double d = o.disparity_at(xl, t);
    if (best < 0 || d > best_d) {
      best = int(i);
      best_d = d;
      xl_out = xl;
    }
  }
  return best;
}

inline std::array<double, 3> surface_color(const SceneSpec& s, const DomainStyle& style, int surf,
                                           double y, double xl, int t) {
  if (surf < 0) return texture(style.texture_family, s.background_seed, y, xl);
  const auto& o = s.objects[std::size_t(surf)];
  return texture(style.texture_family, o.texture_seed, y - o.cy_at(t), xl - o.cx_at(t));
}

}  // namespace detail

/// Renders frame t of a scene. The right view is produced by projecting each
/// surface by its disparity; occluded and out-of-view left pixels are invalid.
template <typename T>
StereoFrame<T> render_frame(const SceneSpec& scene, const DomainStyle& style, int t,
                            std::uint64_t noise_seed = 0) {
  if (t < 0) throw std::invalid_argument("render_frame: negative time");
  style.validate();
  for (const auto& o : scene.objects)
    if (o.disparity <= scene.background_disparity)
      throw std::invalid_argument("render_frame: object disparity must exceed background");
  const std::size_t h = scene.height, w = scene.width;
  std::vector<T> left(h * w * 3), right(h * w * 3), disp(h * w), valid(h * w);
  std::mt19937_64 rng(detail::splitmix64(noise_seed ^ (0xA5A5ull + std::uint64_t(t) * 7919ull)));
  std::normal_distribution<double> noise(0.0, style.noise_sigma / std::sqrt(2.0));
  auto noisy = [&](double c) {
    if (style.noise_sigma <= 0) return c;
    return std::clamp(c + noise(rng), 0.0, 1.0);
  };

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t o = y * w + x;
      double d = 0;
      const int surf = detail::left_surface(scene, double(y), double(x), t, d);
      const auto c = detail::surface_color(scene, style, surf, double(y), double(x), t);
      for (std::size_t ch = 0; ch < 3; ++ch) left[o * 3 + ch] = T(noisy(detail::apply_style(style, c[ch], ch)));
      disp[o] = T(d);
      const double xr = double(x) - d;
      bool ok = xr >= 0.0;
      if (ok) {
        double xl = 0;
        ok = detail::right_surface(scene, double(y), xr, t, xl) == surf;
      }
      valid[o] = ok ? T(1) : T(0);
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t o = y * w + x;
      double xl = 0;
      const int surf = detail::right_surface(scene, double(y), double(x), t, xl);
      const auto c = detail::surface_color(scene, style, surf, double(y), xl, t);
      for (std::size_t ch = 0; ch < 3; ++ch) right[o * 3 + ch] = T(noisy(detail::apply_style(style, c[ch], ch)));
    }
  return {Tensor<T>::constant({h, w, 3}, std::move(left)), Tensor<T>::constant({h, w, 3}, std::move(right)),
          Tensor<T>::constant({h, w}, std::move(disp)), Tensor<T>::constant({h, w}, std::move(valid))};
}

template <typename T>
Sequence<T> make_sequence(std::uint64_t seed, std::size_t length, const DomainStyle& style,
                          const std::string& environment, const GeneratorConfig& cfg,
                          std::string id = {}) {
  if (length < 1) throw std::invalid_argument("make_sequence: length must be >= 1");
  const SceneSpec scene = make_scene(seed, cfg);
  Sequence<T> seq;
  seq.domain = style;
  seq.environment = environment;
  seq.id = id.empty() ? "s" + std::to_string(seed) : std::move(id);
  for (std::size_t t = 0; t < length; ++t)
    seq.frames.push_back(render_frame<T>(scene, style, int(t), seed));
  return seq;
}

}  // namespace pointfix
