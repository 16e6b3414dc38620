// Toy coarse-to-fine correlation stereo network.
//
// Level l works at stride 2^l. Each level has one feature conv; the coarsest
// level regresses disparity from its cost volume and left features, every
// finer level regresses a residual on top of the upsampled coarser estimate.
// Disparities inside the network are in level pixels; the public pyramid is
// in full-resolution pixels.
#pragma once

#include <pointfix/ops.hpp>
#include <pointfix/param_set.hpp>
#include <pointfix/scene.hpp>

#include <json.hpp>

#include <array>
#include <random>
#include <string>
#include <vector>

namespace pointfix {

struct StereoModelConfig {
  std::vector<std::size_t> feature_channels{16, 32, 32};  ///< per level, finest first
  std::size_t max_disp = 6;                               ///< correlation range, level px
  /// Hidden widths of the two inner decoder convs, finest level first.
  std::vector<std::array<std::size_t, 2>> decoder_hidden{{8, 8}, {16, 8}, {32, 16}};
  double leaky_slope = 0.2;
  double init_disparity = 8.0;  ///< full-res px the untrained coarsest level starts near

  std::size_t levels() const { return feature_channels.size(); }
  std::size_t stride(std::size_t level) const { return std::size_t{1} << level; }
  std::size_t base_stride() const { return stride(levels() - 1); }
  std::size_t base_feature_channels() const { return max_disp + 1 + feature_channels.back(); }

  void validate() const {
    if (feature_channels.empty()) throw std::invalid_argument("StereoModelConfig: no levels");
    if (decoder_hidden.size() != levels())
      throw std::invalid_argument("StereoModelConfig: decoder widths must match levels");
    if (max_disp < 1) throw std::invalid_argument("StereoModelConfig: max_disp must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const StereoModelConfig& c) {
  j = {{"feature_channels", c.feature_channels},
       {"max_disp", c.max_disp},
       {"decoder_hidden", c.decoder_hidden},
       {"leaky_slope", c.leaky_slope},
       {"init_disparity", c.init_disparity}};
}

inline void from_json(const nlohmann::json& j, StereoModelConfig& c) {
  StereoModelConfig d;
  c.feature_channels = j.value("feature_channels", d.feature_channels);
  c.max_disp = j.value("max_disp", d.max_disp);
  c.decoder_hidden = j.value("decoder_hidden", d.decoder_hidden);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.init_disparity = j.value("init_disparity", d.init_disparity);
  c.validate();
}

template <typename T>
struct FeatureMap {
  Tensor<T> values;  ///< [H', W', C]
  std::size_t stride = 1;
};

template <typename T>
struct StereoPrediction {
  Tensor<T> disparity;               ///< [H, W], full-res px
  std::vector<Tensor<T>> pyramid;    ///< coarsest first, [H_l, W_l] in full-res px
  std::vector<std::size_t> strides;  ///< stride of each pyramid entry
  Tensor<T> base_feature;            ///< [H/s, W/s, D+1+C] at the coarsest stride
  std::size_t base_stride = 1;

  /// Pyramid entry i resampled to full resolution.
  Tensor<T> upsampled(std::size_t i) const {
    const Tensor<T>& p = pyramid.at(i);
    const std::size_t h = disparity.dim(0), w = disparity.dim(1);
    return reshape(resize_bilinear(reshape(p, {p.dim(0), p.dim(1), 1}), h, w), {h, w});
  }
};

namespace detail {
template <typename T>
Tensor<T> conv_param(std::mt19937_64& rng, std::size_t k, std::size_t cin, std::size_t cout,
                     double gain) {
  std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / double(k * k * cin)));
  std::vector<T> v(k * k * cin * cout);
  for (auto& x : v) x = T(nd(rng));
  return Tensor<T>::parameter({k, k, cin, cout}, std::move(v));
}

inline std::string feat_name(std::size_t l, const char* what) {
  return "features.l" + std::to_string(l) + "." + what;
}
inline std::string dec_name(std::size_t l, std::size_t j, const char* what) {
  return "decoder.l" + std::to_string(l) + ".conv" + std::to_string(j) + "." + what;
}
}  // namespace detail

template <typename T>
ParamSet<T> init_stereo_model(const StereoModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 1);
  ParamSet<T> p(ParamRole::base);
  std::size_t cin = 3;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const std::size_t c = cfg.feature_channels[l];
    p.add(detail::feat_name(l, "w"), detail::conv_param<T>(rng, 3, cin, c, 1.0));
    p.add(detail::feat_name(l, "b"), Tensor<T>::parameter({c}, std::vector<T>(c, T(0))));
    cin = c;
  }
  for (std::size_t l = cfg.levels(); l-- > 0;) {
    const bool coarsest = l + 1 == cfg.levels();
    std::size_t in = cfg.max_disp + 1 + cfg.feature_channels[l] + (coarsest ? 0 : 1);
    const std::array<std::size_t, 3> outs{cfg.decoder_hidden[l][0], cfg.decoder_hidden[l][1], 1};
    for (std::size_t j = 0; j < 3; ++j) {
      const double gain = j == 2 ? 0.05 : 1.0;
      p.add(detail::dec_name(l, j, "w"), detail::conv_param<T>(rng, 3, in, outs[j], gain));
      T bias0 = 0;
      if (j == 2 && coarsest) {
        // softplus^-1 of the initial disparity in level px
        const double d0 = cfg.init_disparity / double(cfg.stride(l));
        bias0 = T(d0 + std::log(-std::expm1(-d0)));
      }
      p.add(detail::dec_name(l, j, "b"), Tensor<T>::parameter({outs[j]}, std::vector<T>(outs[j], bias0)));
      in = outs[j];
    }
  }
  return p;
}

/// Per-level left-or-right features, finest first.
template <typename T>
std::vector<FeatureMap<T>> extract_features(const Tensor<T>& image, const ParamSet<T>& theta,
                                            const StereoModelConfig& cfg) {
  if (image.ndim() != 3) throw std::invalid_argument("extract_features: image must be [H,W,C]");
  const std::size_t div = cfg.base_stride();
  if (image.dim(0) % div != 0 || image.dim(1) % div != 0)
    throw std::invalid_argument("extract_features: image size " + shape_str(image.shape()) +
                                " not divisible by " + std::to_string(div));
  const T slope = T(cfg.leaky_slope);
  std::vector<FeatureMap<T>> out;
  Tensor<T> x = add_scalar(image, T(-0.5));
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const std::size_t stride = l == 0 ? 1 : 2;
    x = leaky_relu(add(conv2d(x, theta.at(detail::feat_name(l, "w")), stride),
                       theta.at(detail::feat_name(l, "b"))),
                   slope);
    out.push_back({x, cfg.stride(l)});
  }
  return out;
}

template <typename T>
Tensor<T> correlation(const FeatureMap<T>& fl, const FeatureMap<T>& fr, std::size_t max_disp) {
  if (fl.stride != fr.stride) throw std::invalid_argument("correlation: stride mismatch");
  return correlation(fl.values, fr.values, max_disp);
}

template <typename T>
StereoPrediction<T> predict(const Tensor<T>& left, const Tensor<T>& right, const ParamSet<T>& theta,
                            const StereoModelConfig& cfg) {
  if (left.shape() != right.shape()) throw std::invalid_argument("predict: left/right shapes differ");
  const auto fl = extract_features(left, theta, cfg);
  const auto fr = extract_features(right, theta, cfg);
  const T slope = T(cfg.leaky_slope);
  const std::size_t h = left.dim(0), w = left.dim(1);

  StereoPrediction<T> pred;
  Tensor<T> coarser;  // [H_l, W_l, 1], level px
  for (std::size_t l = cfg.levels(); l-- > 0;) {
    const bool coarsest = l + 1 == cfg.levels();
    const Tensor<T> cost = correlation(fl[l], fr[l], cfg.max_disp);
    const std::size_t lh = cost.dim(0), lw = cost.dim(1);
    Tensor<T> up;
    std::vector<Tensor<T>> parts{cost, fl[l].values};
    if (!coarsest) {
      up = scale(resize_bilinear(coarser, lh, lw), T(2));
      parts.push_back(up);
    }
    Tensor<T> x = concat_last(parts);
    if (coarsest) {
      pred.base_feature = x;
      pred.base_stride = cfg.stride(l);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      x = add(conv2d(x, theta.at(detail::dec_name(l, j, "w"))), theta.at(detail::dec_name(l, j, "b")));
      if (j < 2) x = leaky_relu(x, slope);
    }
    coarser = softplus(coarsest ? x : add(up, x));
    pred.pyramid.push_back(reshape(scale(coarser, T(cfg.stride(l))), {lh, lw}));
    pred.strides.push_back(cfg.stride(l));
  }
  const Tensor<T>& finest = pred.pyramid.back();
  pred.disparity = reshape(resize_bilinear(reshape(finest, {finest.dim(0), finest.dim(1), 1}), h, w), {h, w});
  return pred;
}

template <typename T>
StereoPrediction<T> predict(const StereoFrame<T>& frame, const ParamSet<T>& theta,
                            const StereoModelConfig& cfg) {
  return predict(frame.left, frame.right, theta, cfg);
}

struct ModuleGroup {
  std::string name;
  std::vector<std::string> params;
  /// Index into StereoPrediction::pyramid whose output this group drives
  /// (-1 for the shared feature extractor).
  int pyramid_index = -1;
};

/// Partition of the base parameters: the shared feature extractor, then one
/// decoder per level from coarsest to finest.
inline std::vector<ModuleGroup> list_modules(const StereoModelConfig& cfg) {
  std::vector<ModuleGroup> groups;
  ModuleGroup feat{"features", {}, -1};
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    feat.params.push_back(detail::feat_name(l, "w"));
    feat.params.push_back(detail::feat_name(l, "b"));
  }
  groups.push_back(feat);
  int idx = 0;
  for (std::size_t l = cfg.levels(); l-- > 0;) {
    ModuleGroup g{"decoder_s" + std::to_string(cfg.stride(l)), {}, idx++};
    for (std::size_t j = 0; j < 3; ++j) {
      g.params.push_back(detail::dec_name(l, j, "w"));
      g.params.push_back(detail::dec_name(l, j, "b"));
    }
    groups.push_back(g);
  }
  return groups;
}

template <typename T>
std::vector<ModuleGroup> list_modules(const ParamSet<T>& theta, const StereoModelConfig& cfg) {
  auto groups = list_modules(cfg);
  for (const auto& g : groups)
    for (const auto& n : g.params)
      if (!theta.contains(n)) throw std::invalid_argument("list_modules: parameters do not match config");
  return groups;
}

}  // namespace pointfix
