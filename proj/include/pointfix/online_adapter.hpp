// Test-time adaptation with an unsupervised photometric loss.
//
// Each frame is first evaluated with the current parameters, then one update
// is taken on the reprojection loss of that frame: all parameters (FULL), one
// module group at a time (MAD) or nothing (NONE).
#pragma once

#include <pointfix/metrics.hpp>
#include <pointfix/ops.hpp>
#include <pointfix/optim.hpp>
#include <pointfix/scene.hpp>
#include <pointfix/stereo_model.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <random>
#include <string>
#include <vector>

namespace pointfix {

struct ReprojectionConfig {
  double ssim_weight = 0.85;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

namespace detail {

// 3x3 erosion of an [H,W] 0/1 mask (borders count as outside).
template <typename T>
Tensor<T> erode3(const Tensor<T>& m) {
  const std::size_t h = m.dim(0), w = m.dim(1);
  std::vector<T> out(h * w, T(0));
  const auto v = m.values();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      bool keep = true;
      for (int dy = -1; dy <= 1 && keep; ++dy)
        for (int dx = -1; dx <= 1 && keep; ++dx) {
          const std::ptrdiff_t yy = std::ptrdiff_t(y) + dy, xx = std::ptrdiff_t(x) + dx;
          if (yy < 0 || xx < 0 || yy >= std::ptrdiff_t(h) || xx >= std::ptrdiff_t(w)) continue;
          keep = v[std::size_t(yy) * w + std::size_t(xx)] > T(0.5);
        }
      out[y * w + x] = keep ? T(1) : T(0);
    }
  return Tensor<T>::constant({h, w}, std::move(out));
}

}  // namespace detail

/// Per-pixel 3x3 SSIM of two [H,W,C] images, [H,W,C].
template <typename T>
Tensor<T> ssim_map(const Tensor<T>& x, const Tensor<T>& y, const ReprojectionConfig& cfg = {}) {
  const Tensor<T> mx = box_filter3(x), my = box_filter3(y);
  const Tensor<T> sx = sub(box_filter3(mul(x, x)), mul(mx, mx));
  const Tensor<T> sy = sub(box_filter3(mul(y, y)), mul(my, my));
  const Tensor<T> sxy = sub(box_filter3(mul(x, y)), mul(mx, my));
  const T c1 = T(cfg.c1), c2 = T(cfg.c2);
  const Tensor<T> num = mul(add_scalar(scale(mul(mx, my), T(2)), c1), add_scalar(scale(sxy, T(2)), c2));
  const Tensor<T> den = mul(add_scalar(add(mul(mx, mx), mul(my, my)), c1), add_scalar(add(sx, sy), c2));
  return div(num, den);
}

/// w_s (1 - SSIM)/2 + (1 - w_s) |left - warp(right, d)|, channel-averaged and
/// averaged over pixels whose 3x3 neighbourhood samples the right view in view
/// (and, if given, where `extra_mask` [H,W] is nonzero).
template <typename T>
Tensor<T> reprojection_loss(const Tensor<T>& left, const Tensor<T>& right, const Tensor<T>& disparity,
                            const ReprojectionConfig& cfg = {}, const Tensor<T>* extra_mask = nullptr) {
  if (left.shape() != right.shape() || left.ndim() != 3)
    throw std::invalid_argument("reprojection_loss: images must be congruent [H,W,C]");
  const auto warp = bilinear_warp_1d(right, disparity);
  Tensor<T> mask = detail::erode3(warp.in_view);
  if (extra_mask) {
    if (extra_mask->shape() != mask.shape()) throw std::invalid_argument("reprojection_loss: mask shape mismatch");
    std::vector<T> m = mask.vec();
    const auto& e = extra_mask->values();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = e[i] != T(0) ? m[i] : T(0);
    mask = Tensor<T>::constant(mask.shape(), std::move(m));
  }
  double n = 0;
  for (T v : mask.values()) n += double(v);
  if (n <= 0) return Tensor<T>::scalar(T(0));
  const std::size_t h = left.dim(0), w = left.dim(1), c = left.dim(2);
  const T ws = T(cfg.ssim_weight);
  const Tensor<T> dssim = scale(add_scalar(neg(ssim_map(left, warp.image, cfg)), T(1)), T(0.5));
  const Tensor<T> l1 = abs(sub(left, warp.image));
  const Tensor<T> per = add(scale(dssim, ws), scale(l1, T(1) - ws));
  const Tensor<T> m3 = reshape(mask, {h, w, 1});
  return scale(sum(mul(per, m3)), T(1.0 / (n * double(c))));
}

// ---------------------------------------------------------------------------

enum class AdaptKind { none, full, mad };
enum class MadPolicy { round_robin, loss_proportional };
enum class ResetPolicy { per_sequence, never };

inline AdaptKind adapt_kind_from_name(const std::string& s) {
  if (s == "none" || s == "NONE") return AdaptKind::none;
  if (s == "full" || s == "FULL") return AdaptKind::full;
  if (s == "mad" || s == "MAD") return AdaptKind::mad;
  throw std::invalid_argument("unknown adaptation mode: " + s);
}
inline const char* adapt_kind_name(AdaptKind k) {
  switch (k) {
    case AdaptKind::none: return "none";
    case AdaptKind::full: return "full";
    case AdaptKind::mad: return "mad";
  }
  return "none";
}
inline MadPolicy mad_policy_from_name(const std::string& s) {
  if (s == "round_robin") return MadPolicy::round_robin;
  if (s == "loss_proportional") return MadPolicy::loss_proportional;
  throw std::invalid_argument("unknown MAD policy: " + s);
}
inline const char* mad_policy_name(MadPolicy p) {
  return p == MadPolicy::round_robin ? "round_robin" : "loss_proportional";
}
inline ResetPolicy reset_policy_from_name(const std::string& s) {
  if (s == "per_sequence") return ResetPolicy::per_sequence;
  if (s == "never") return ResetPolicy::never;
  throw std::invalid_argument("unknown reset policy: " + s);
}
inline const char* reset_policy_name(ResetPolicy p) { return p == ResetPolicy::per_sequence ? "per_sequence" : "never"; }

struct AdaptationMode {
  AdaptKind kind = AdaptKind::full;
  MadPolicy policy = MadPolicy::round_robin;
  std::size_t modules_per_step = 1;
};

struct AdaptConfig {
  AdaptationMode mode;
  double lr = 1e-4;
  std::string optimizer = "adam";
  ResetPolicy reset = ResetPolicy::per_sequence;
  ReprojectionConfig loss;
  std::uint64_t seed = 0;     ///< loss_proportional sampling
  bool record_timing = true;  ///< false: ms column is 0 so reports are reproducible
};

inline void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = {{"mode", adapt_kind_name(c.mode.kind)},
       {"mad_policy", mad_policy_name(c.mode.policy)},
       {"modules_per_step", c.mode.modules_per_step},
       {"lr", c.lr},
       {"optimizer", c.optimizer},
       {"reset", reset_policy_name(c.reset)},
       {"ssim_weight", c.loss.ssim_weight},
       {"seed", c.seed},
       {"record_timing", c.record_timing}};
}
inline void from_json(const nlohmann::json& j, AdaptConfig& c) {
  AdaptConfig d;
  c.mode.kind = adapt_kind_from_name(j.value("mode", std::string(adapt_kind_name(d.mode.kind))));
  c.mode.policy = mad_policy_from_name(j.value("mad_policy", std::string(mad_policy_name(d.mode.policy))));
  c.mode.modules_per_step = j.value("modules_per_step", d.mode.modules_per_step);
  c.lr = j.value("lr", d.lr);
  c.optimizer = j.value("optimizer", d.optimizer);
  c.reset = reset_policy_from_name(j.value("reset", std::string(reset_policy_name(d.reset))));
  c.loss.ssim_weight = j.value("ssim_weight", d.loss.ssim_weight);
  c.seed = j.value("seed", d.seed);
  c.record_timing = j.value("record_timing", d.record_timing);
  if (c.lr < 0) throw std::invalid_argument("adapt: lr must be >= 0");
  optimizer_from_name(c.optimizer);
}

struct FrameRecord {
  std::size_t frame = 0;
  double d1_all = 0, epe = 0, reproj = 0;
  std::string modules;  ///< '+'-joined adapted group names, "-" if none
  double ms = 0;
};

struct AdaptationReport {
  std::string sequence;
  std::string mode;
  double lr = 0;
  std::vector<FrameRecord> records;
  double mean_d1_all = 0, mean_epe = 0, mean_reproj = 0;

  void aggregate() {
    mean_d1_all = mean_epe = mean_reproj = 0;
    for (const auto& r : records) {
      mean_d1_all += r.d1_all;
      mean_epe += r.epe;
      mean_reproj += r.reproj;
    }
    if (!records.empty()) {
      const double n = double(records.size());
      mean_d1_all /= n;
      mean_epe /= n;
      mean_reproj /= n;
    }
  }
};

template <typename T>
struct AdaptStepResult {
  StereoPrediction<T> prediction;  ///< pre-update
  double loss = 0;                 ///< full-resolution reprojection loss of the prediction
  std::vector<std::string> modules;
};

/// Stateful adapter: current parameters, optimizer state and MAD schedule.
template <typename T>
class OnlineAdapter {
 public:
  OnlineAdapter(const ParamSet<T>& theta, const StereoModelConfig& model, const AdaptConfig& cfg)
      : model_(model), cfg_(cfg), init_(theta.detached()), groups_(list_modules(theta, model)) {
    if (cfg.mode.kind == AdaptKind::mad &&
        (cfg.mode.modules_per_step < 1 || cfg.mode.modules_per_step > groups_.size()))
      throw std::invalid_argument("OnlineAdapter: modules_per_step outside [1, module count]");
    reset();
  }

  void reset() {
    theta_ = init_.as_leaves();
    opt_ = Optimizer<T>(optimizer_from_name(cfg_.optimizer), cfg_.lr);
    step_ = 0;
    rng_.seed(detail::splitmix64(cfg_.seed + 0xADA97ull));
  }

  const ParamSet<T>& theta() const { return theta_; }
  const std::vector<ModuleGroup>& groups() const { return groups_; }

  /// Evaluate the frame with the current parameters, then adapt on it.
  AdaptStepResult<T> adapt_step(const StereoFrame<T>& frame) {
    AdaptStepResult<T> out;
    const bool learn = cfg_.mode.kind != AdaptKind::none;
    GradModeGuard mode(learn);
    out.prediction = predict(frame, theta_, model_);
    const Tensor<T> full = reprojection_loss(frame.left, frame.right, out.prediction.disparity, cfg_.loss);
    out.loss = double(full.item());
    if (!learn) return out;
    if (cfg_.mode.kind == AdaptKind::full) {
      theta_ = opt_.step(theta_, grad(full, theta_));
      out.modules.push_back("all");
    } else {
      for (std::size_t gi : select_groups(frame, out.prediction, full)) {
        const ModuleGroup& g = groups_[gi];
        const Tensor<T> loss = g.pyramid_index < 0 ? full : level_loss(frame, out.prediction, g.pyramid_index);
        const ParamSet<T> sub_theta = subset(theta_, g.params);
        theta_ = merged(theta_, opt_.step(sub_theta, grad(loss, sub_theta)));
        out.modules.push_back(g.name);
      }
    }
    ++step_;
    return out;
  }

 private:
  Tensor<T> level_loss(const StereoFrame<T>& f, const StereoPrediction<T>& p, int idx) const {
    return reprojection_loss(f.left, f.right, p.upsampled(std::size_t(idx)), cfg_.loss);
  }

  std::vector<std::size_t> select_groups(const StereoFrame<T>& f, const StereoPrediction<T>& p,
                                         const Tensor<T>& full) {
    const std::size_t n = groups_.size(), m = cfg_.mode.modules_per_step;
    std::vector<std::size_t> out;
    if (cfg_.mode.policy == MadPolicy::round_robin) {
      for (std::size_t i = 0; i < m; ++i) out.push_back((step_ * m + i) % n);
      return out;
    }
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int idx = groups_[i].pyramid_index;
      w[i] = idx < 0 ? double(full.item()) : double(level_loss(f, p, idx).item());
      w[i] = std::max(w[i], 1e-12);
    }
    for (std::size_t i = 0; i < m; ++i) {
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const std::size_t g = pick(rng_);
      out.push_back(g);
      w[g] = 0;
    }
    return out;
  }

  StereoModelConfig model_;
  AdaptConfig cfg_;
  ParamSet<T> init_;
  std::vector<ModuleGroup> groups_;
  ParamSet<T> theta_;
  Optimizer<T> opt_;
  std::size_t step_ = 0;
  std::mt19937_64 rng_;
};

/// Runs the adapter over one sequence from its current state.
template <typename T>
AdaptationReport adapt_sequence(OnlineAdapter<T>& adapter, const Sequence<T>& seq, const AdaptConfig& cfg,
                                const MetricOptions& metrics = {}) {
  AdaptationReport rep;
  rep.sequence = seq.id;
  rep.mode = adapt_kind_name(cfg.mode.kind);
  rep.lr = cfg.lr;
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& f = seq.frames[t];
    const auto t0 = std::chrono::steady_clock::now();
    const auto step = adapter.adapt_step(f);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const Tensor<T> valid = frame_eval_mask(f, metrics, seq.id, t);
    FrameRecord r;
    r.frame = t;
    r.d1_all = d1_all(step.prediction.disparity, f.gt_disparity, valid, metrics.kitti_d1);
    r.epe = epe(step.prediction.disparity, f.gt_disparity, valid);
    r.reproj = step.loss;
    for (const auto& m : step.modules) r.modules += (r.modules.empty() ? "" : "+") + m;
    if (r.modules.empty()) r.modules = "-";
    r.ms = cfg.record_timing ? ms : 0.0;
    rep.records.push_back(r);
  }
  rep.aggregate();
  return rep;
}

/// Adapts through `sequences` in order; one report per sequence. With
/// ResetPolicy::never the parameters and optimizer state carry over between
/// sequences.
template <typename T>
std::vector<AdaptationReport> run_adaptation(const ParamSet<T>& theta_init, const std::vector<Sequence<T>>& sequences,
                                             const StereoModelConfig& model, const AdaptConfig& cfg,
                                             const MetricOptions& metrics = {},
                                             ParamSet<T>* theta_out = nullptr) {
  if (sequences.empty()) throw std::invalid_argument("run_adaptation: no sequences");
  OnlineAdapter<T> adapter(theta_init, model, cfg);
  std::vector<AdaptationReport> reports;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    if (s > 0 && cfg.reset == ResetPolicy::per_sequence) adapter.reset();
    reports.push_back(adapt_sequence(adapter, sequences[s], cfg, metrics));
  }
  if (theta_out) *theta_out = adapter.theta();
  return reports;
}

/// Re-adapts on the same frames for `steps` passes. Record i holds the mean
/// pre-update metrics of pass i (frame = pass index).
template <typename T>
AdaptationReport repeated_adaptation(const ParamSet<T>& theta_init, const std::vector<StereoFrame<T>>& frames,
                                     std::size_t steps, const StereoModelConfig& model, const AdaptConfig& cfg,
                                     const MetricOptions& metrics = {}) {
  if (frames.empty()) throw std::invalid_argument("repeated_adaptation: no frames");
  OnlineAdapter<T> adapter(theta_init, model, cfg);
  AdaptationReport rep;
  rep.sequence = "repeat";
  rep.mode = adapt_kind_name(cfg.mode.kind);
  rep.lr = cfg.lr;
  for (std::size_t k = 0; k < steps; ++k) {
    FrameRecord r;
    r.frame = k;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> mods;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto& f = frames[t];
      const auto step = adapter.adapt_step(f);
      const Tensor<T> valid = frame_eval_mask(f, metrics, "repeat", t);
      r.d1_all += d1_all(step.prediction.disparity, f.gt_disparity, valid, metrics.kitti_d1) / double(frames.size());
      r.epe += epe(step.prediction.disparity, f.gt_disparity, valid) / double(frames.size());
      r.reproj += step.loss / double(frames.size());
      for (const auto& m : step.modules)
        if (std::find(mods.begin(), mods.end(), m) == mods.end()) mods.push_back(m);
    }
    for (const auto& m : mods) r.modules += (r.modules.empty() ? "" : "+") + m;
    if (r.modules.empty()) r.modules = "-";
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.ms = cfg.record_timing ? ms : 0.0;
    rep.records.push_back(r);
  }
  rep.aggregate();
  return rep;
}

}  // namespace pointfix
