// Disparity error metrics.
#pragma once

#include <pointfix/scene.hpp>
#include <pointfix/tensor.hpp>

#include <random>
#include <string>

namespace pointfix {

struct MetricResult {
  double d1_all = 0;  ///< percent
  double epe = 0;     ///< px
  std::size_t n_valid = 0;
};

struct MetricOptions {
  bool kitti_d1 = false;         ///< outlier iff error > 3 px and > 5% of gt
  bool sparse_gt = false;        ///< keep a random subset of the valid pixels
  double sparse_fraction = 0.2;
  std::uint64_t sparse_seed = 0;
};

namespace detail {
template <typename T>
std::size_t check_metric_inputs(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  if (pred.shape() != gt.shape() || pred.shape() != valid.shape())
    throw std::invalid_argument("metrics: pred, gt and valid must be congruent");
  std::size_t n = 0;
  for (T v : valid.values()) n += v > T(0.5);
  if (n == 0) throw std::invalid_argument("metrics: no valid pixels");
  return n;
}
}  // namespace detail

template <typename T>
double epe(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  const std::size_t n = detail::check_metric_inputs(pred, gt, valid);
  const auto p = pred.values(), g = gt.values(), v = valid.values();
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (v[i] > T(0.5)) s += std::abs(double(p[i]) - double(g[i]));
  return s / double(n);
}

/// Percentage of valid pixels with error > 3 px (and > 5% of gt for the
/// KITTI variant).
template <typename T>
double d1_all(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid, bool kitti = false) {
  const std::size_t n = detail::check_metric_inputs(pred, gt, valid);
  const auto p = pred.values(), g = gt.values(), v = valid.values();
  std::size_t bad = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (v[i] <= T(0.5)) continue;
    const double e = std::abs(double(p[i]) - double(g[i]));
    bad += e > 3.0 && (!kitti || e > 0.05 * std::abs(double(g[i])));
  }
  return 100.0 * double(bad) / double(n);
}

template <typename T>
MetricResult evaluate_metrics(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid, bool kitti = false) {
  MetricResult r;
  r.n_valid = detail::check_metric_inputs(pred, gt, valid);
  r.d1_all = d1_all(pred, gt, valid, kitti);
  r.epe = epe(pred, gt, valid);
  return r;
}

/// Each valid pixel kept independently with probability `fraction`; at least
/// one valid pixel survives if any was valid.
template <typename T>
Tensor<T> subsample_valid(const Tensor<T>& valid, double fraction, std::uint64_t seed) {
  if (fraction <= 0 || fraction > 1) throw std::invalid_argument("subsample_valid: fraction must be in (0,1]");
  std::mt19937_64 rng(detail::splitmix64(seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> out(valid.numel(), T(0));
  std::size_t kept = 0, first = out.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (valid[i] <= T(0.5)) continue;
    if (first == out.size()) first = i;
    if (u(rng) < fraction) {
      out[i] = T(1);
      ++kept;
    }
  }
  if (kept == 0 && first < out.size()) out[first] = T(1);
  return Tensor<T>::constant(valid.shape(), std::move(out));
}

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

/// Evaluation mask of frame t of sequence `seq_id` under `opts`.
template <typename T>
Tensor<T> frame_eval_mask(const StereoFrame<T>& f, const MetricOptions& opts, const std::string& seq_id,
                          std::size_t t) {
  if (!opts.sparse_gt) return f.valid_mask;
  const std::uint64_t seed = detail::splitmix64(opts.sparse_seed ^ hash_string(seq_id)) + t;
  return subsample_valid(f.valid_mask, opts.sparse_fraction, seed);
}

}  // namespace pointfix
