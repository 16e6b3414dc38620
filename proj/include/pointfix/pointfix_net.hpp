// Point-selective auxiliary network.
//
// Erroneous pixels are picked by thresholding the current error, a small conv
// module encodes (image, prediction, ground truth) into a context grid aligned
// with the base feature grid, and a shared FC head maps the concatenated base
// and context features of each point's cell to a residual disparity.
#pragma once

#include <pointfix/ops.hpp>
#include <pointfix/param_set.hpp>
#include <pointfix/stereo_model.hpp>

#include <json.hpp>

#include <map>
#include <random>
#include <vector>

namespace pointfix {

struct PointFixConfig {
  std::vector<std::size_t> context_channels{32, 64, 128};
  std::vector<std::size_t> context_kernels{3, 3, 1};
  std::vector<std::size_t> context_strides{2, 2, 1};  ///< product must equal the base stride
  std::size_t fc_layers = 4;
  double leaky_slope = 0.2;
  double d_max = 24.0;  ///< disparity normaliser for the context input
  double head_gain = 0.05;

  std::size_t context_stride() const {
    std::size_t s = 1;
    for (auto v : context_strides) s *= v;
    return s;
  }
  std::size_t context_out() const { return context_channels.back(); }

  void validate() const {
    if (context_channels.empty() || context_channels.size() != context_kernels.size() ||
        context_channels.size() != context_strides.size())
      throw std::invalid_argument("PointFixConfig: context layer lists must have equal non-zero length");
    if (fc_layers < 1) throw std::invalid_argument("PointFixConfig: need at least one FC layer");
    if (d_max <= 0) throw std::invalid_argument("PointFixConfig: d_max must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const PointFixConfig& c) {
  j = {{"context_channels", c.context_channels}, {"context_kernels", c.context_kernels},
       {"context_strides", c.context_strides},   {"fc_layers", c.fc_layers},
       {"leaky_slope", c.leaky_slope},           {"d_max", c.d_max},
       {"head_gain", c.head_gain}};
}

inline void from_json(const nlohmann::json& j, PointFixConfig& c) {
  PointFixConfig d;
  c.context_channels = j.value("context_channels", d.context_channels);
  c.context_kernels = j.value("context_kernels", d.context_kernels);
  c.context_strides = j.value("context_strides", d.context_strides);
  c.fc_layers = j.value("fc_layers", d.fc_layers);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.d_max = j.value("d_max", d.d_max);
  c.head_gain = j.value("head_gain", d.head_gain);
  c.validate();
}

struct Point {
  std::uint32_t row = 0, col = 0;
  bool operator==(const Point&) const = default;
};

/// Full-resolution pixel coordinates, row-major order, no duplicates.
struct PointSet {
  std::size_t height = 0, width = 0;
  std::vector<Point> coords;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }

  /// Flat pixel indices y*W + x.
  RowIndex pixel_index() const {
    std::vector<std::uint32_t> idx;
    idx.reserve(coords.size());
    for (const auto& p : coords) idx.push_back(std::uint32_t(p.row * width + p.col));
    return make_index(std::move(idx));
  }
};

template <typename T>
struct PointFixParams {
  ParamSet<T> context{ParamRole::pointfix_context};
  ParamSet<T> head{ParamRole::pointfix_head};
};

template <typename T>
PointFixParams<T> init_pointfix(const PointFixConfig& cfg, const StereoModelConfig& model,
                                std::uint64_t seed) {
  cfg.validate();
  if (cfg.context_stride() != model.base_stride())
    throw std::invalid_argument("init_pointfix: context stride must match the base feature stride");
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ull + 7);
  PointFixParams<T> p;
  std::size_t cin = 5;
  for (std::size_t l = 0; l < cfg.context_channels.size(); ++l) {
    const std::size_t c = cfg.context_channels[l], k = cfg.context_kernels[l];
    const std::string n = "context.conv" + std::to_string(l);
    p.context.add(n + ".w", detail::conv_param<T>(rng, k, cin, c, 1.0));
    p.context.add(n + ".b", Tensor<T>::parameter({c}, std::vector<T>(c, T(0))));
    cin = c;
  }
  const std::size_t width = model.base_feature_channels() + cfg.context_out();
  for (std::size_t l = 0; l < cfg.fc_layers; ++l) {
    const bool last = l + 1 == cfg.fc_layers;
    const std::size_t out = last ? 1 : width;
    std::normal_distribution<double> nd(0.0, (last ? cfg.head_gain : 1.0) * std::sqrt(2.0 / double(width)));
    std::vector<T> w(width * out);
    for (auto& v : w) v = T(nd(rng));
    const std::string n = "head.fc" + std::to_string(l);
    p.head.add(n + ".w", Tensor<T>::parameter({width, out}, std::move(w)));
    p.head.add(n + ".b", Tensor<T>::parameter({out}, std::vector<T>(out, T(0))));
  }
  return p;
}

/// Valid pixels whose absolute error exceeds `tau` (strictly).
template <typename T>
PointSet select_points(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid, double tau) {
  if (pred.ndim() != 2 || pred.shape() != gt.shape() || pred.shape() != valid.shape())
    throw std::invalid_argument("select_points: maps must be congruent [H,W]");
  if (!(tau > 0)) throw std::invalid_argument("select_points: tau must be > 0");
  PointSet ps;
  ps.height = pred.dim(0);
  ps.width = pred.dim(1);
  const auto p = pred.values(), g = gt.values(), v = valid.values();
  for (std::size_t y = 0; y < ps.height; ++y)
    for (std::size_t x = 0; x < ps.width; ++x) {
      const std::size_t i = y * ps.width + x;
      if (v[i] > T(0.5) && std::abs(double(p[i]) - double(g[i])) > tau)
        ps.coords.push_back({std::uint32_t(y), std::uint32_t(x)});
    }
  return ps;
}

/// Context grid [H/s, W/s, C] from the left image and normalised disparities.
/// Ground truth enters only where it is valid (0 elsewhere).
template <typename T>
Tensor<T> context_features(const Tensor<T>& left, const Tensor<T>& pred, const Tensor<T>& gt,
                           const Tensor<T>& valid, const ParamSet<T>& psi_c, const PointFixConfig& cfg) {
  if (left.ndim() != 3 || left.dim(2) != 3) throw std::invalid_argument("context_features: left must be [H,W,3]");
  const Shape hw{left.dim(0), left.dim(1)};
  if (pred.shape() != hw || gt.shape() != hw || valid.shape() != hw)
    throw std::invalid_argument("context_features: disparity maps must match the image");
  const Shape hw1{hw[0], hw[1], 1};
  const T inv = T(1.0 / cfg.d_max);
  Tensor<T> x = concat_last<T>({add_scalar(left, T(-0.5)), reshape(scale(pred, inv), hw1),
                                reshape(scale(mul(gt, valid), inv), hw1)});
  const T slope = T(cfg.leaky_slope);
  for (std::size_t l = 0; l < cfg.context_channels.size(); ++l) {
    const std::string n = "context.conv" + std::to_string(l);
    x = leaky_relu(add(conv2d(x, psi_c.at(n + ".w"), cfg.context_strides[l]), psi_c.at(n + ".b")), slope);
  }
  return x;
}

/// Grid cell of every point, plus the distinct cells in first-seen order.
struct PointCells {
  RowIndex unique;   ///< flat cell indices evaluated by the head
  RowIndex of_point; ///< position in `unique` for each point
};

inline PointCells map_points(const PointSet& points, std::size_t grid_w, std::size_t stride) {
  std::vector<std::uint32_t> uniq, of;
  std::map<std::uint32_t, std::uint32_t> seen;
  for (const auto& p : points.coords) {
    const auto cell = std::uint32_t((p.row / stride) * grid_w + p.col / stride);
    auto [it, fresh] = seen.emplace(cell, std::uint32_t(uniq.size()));
    if (fresh) uniq.push_back(cell);
    of.push_back(it->second);
  }
  return {make_index(std::move(uniq)), make_index(std::move(of))};
}

/// Shared FC head over rows of `features` [P, C] -> [P].
template <typename T>
Tensor<T> fc_head(const Tensor<T>& features, const ParamSet<T>& psi_p, const PointFixConfig& cfg) {
  Tensor<T> x = features;
  for (std::size_t l = 0; l < cfg.fc_layers; ++l) {
    const std::string n = "head.fc" + std::to_string(l);
    x = add(matmul(x, psi_p.at(n + ".w")), psi_p.at(n + ".b"));
    if (l + 1 < cfg.fc_layers) x = leaky_relu(x, T(cfg.leaky_slope));
  }
  return reshape(x, {x.dim(0)});
}

/// Residual disparity [P] for each point, in point order. The head runs once
/// per distinct grid cell; points sharing a cell share the residual.
template <typename T>
Tensor<T> residuals(const Tensor<T>& z_b, const Tensor<T>& z_c, const PointSet& points,
                    const ParamSet<T>& psi_p, const PointFixConfig& cfg, std::size_t stride) {
  if (z_b.ndim() != 3 || z_c.ndim() != 3 || z_b.dim(0) != z_c.dim(0) || z_b.dim(1) != z_c.dim(1))
    throw std::invalid_argument("residuals: base and context grids differ");
  if (points.empty()) return Tensor<T>::zeros({0});
  const std::size_t gh = z_b.dim(0), gw = z_b.dim(1);
  for (const auto& p : points.coords)
    if (p.row / stride >= gh || p.col / stride >= gw)
      throw std::invalid_argument("residuals: point outside the feature grid");
  const auto cells = map_points(points, gw, stride);
  const Tensor<T> z = concat_last<T>({z_b, z_c});
  const Tensor<T> rows = reshape(z, {gh * gw, z.dim(2)});
  const Tensor<T> r = fc_head(gather_rows(rows, cells.unique), psi_p, cfg);
  return reshape(gather_rows(reshape(r, {r.dim(0), 1}), cells.of_point), {points.size()});
}

enum class LossNorm { mean, sum };

inline LossNorm loss_norm_from_name(const std::string& s) {
  if (s == "mean") return LossNorm::mean;
  if (s == "sum") return LossNorm::sum;
  throw std::invalid_argument("unknown loss normalisation: " + s);
}
inline const char* loss_norm_name(LossNorm n) { return n == LossNorm::mean ? "mean" : "sum"; }

/// Values of an [H,W] map at the points, [P].
template <typename T>
Tensor<T> sample_points(const Tensor<T>& map, const PointSet& points) {
  if (map.ndim() != 2 || map.dim(0) != points.height || map.dim(1) != points.width)
    throw std::invalid_argument("sample_points: map does not match the point set");
  const Tensor<T> rows = reshape(map, {map.numel(), 1});
  return reshape(gather_rows(rows, points.pixel_index()), {points.size()});
}

/// L1 between the corrected disparity (pred + r, or r alone without residual
/// learning) and ground truth at the points. Zero for an empty set.
template <typename T>
Tensor<T> point_loss(const Tensor<T>& pred, const Tensor<T>& r, const Tensor<T>& gt,
                     const PointSet& points, LossNorm norm = LossNorm::mean,
                     bool residual_learning = true) {
  if (r.ndim() != 1 || r.dim(0) != points.size())
    throw std::invalid_argument("point_loss: one residual per point required");
  if (points.empty()) return Tensor<T>::scalar(T(0));
  const Tensor<T> fixed = residual_learning ? add(sample_points(pred, points), r) : r;
  const Tensor<T> err = sum(abs(sub(fixed, sample_points(gt, points))));
  return norm == LossNorm::mean ? scale(err, T(1.0 / double(points.size()))) : err;
}

}  // namespace pointfix
