// Supervised pretraining and point-wise meta-training of the base model.
//
// One meta iteration: for every sample, a differentiable point update of
// (theta, psi) on that sample, a supervised base loss of the updated base
// model, and the sum of those losses differentiated w.r.t. the parameters
// before the update. The outer step is followed by an adaptation-stage point
// update on the whole batch.
#pragma once

#include <pointfix/optim.hpp>
#include <pointfix/pointfix_net.hpp>
#include <pointfix/scene.hpp>
#include <pointfix/stereo_model.hpp>

#include <json.hpp>

#include <chrono>
#include <functional>
#include <random>

namespace pointfix {

struct NetConfig {
  StereoModelConfig stereo;
  PointFixConfig pointfix;
};

inline void to_json(nlohmann::json& j, const NetConfig& c) { j = {{"stereo", c.stereo}, {"pointfix", c.pointfix}}; }
inline void from_json(const nlohmann::json& j, NetConfig& c) {
  c.stereo = j.value("stereo", StereoModelConfig{});
  c.pointfix = j.value("pointfix", PointFixConfig{});
}

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t iterations = 2000;
  double alpha = 1e-4;            ///< inner / adaptation-stage lr
  double beta = 1e-4;             ///< outer lr
  double alpha_phase2 = -1;       ///< inner lr after phase2_start (< 0: keep alpha)
  std::size_t phase2_start = 0;   ///< 0: single phase
  double tau = 3.0;
  bool use_pointfix_net = true;
  bool use_meta_learning = true;
  bool use_online_adapt_stage = true;
  bool residual_learning = true;
  bool second_order = true;
  LossNorm loss_norm = LossNorm::mean;
  std::string outer_optimizer = "adam";
  std::size_t crop_height = 0;    ///< 0: full frames
  std::size_t crop_width = 0;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  double alpha_at(std::size_t k) const {
    return (phase2_start > 0 && k >= phase2_start && alpha_phase2 >= 0) ? alpha_phase2 : alpha;
  }

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
    if (alpha < 0 || beta < 0) throw std::invalid_argument("TrainConfig: learning rates must be >= 0");
    if (!(tau > 0)) throw std::invalid_argument("TrainConfig: tau must be > 0");
    optimizer_from_name(outer_optimizer);
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"iterations", c.iterations},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"alpha_phase2", c.alpha_phase2},
       {"phase2_start", c.phase2_start},
       {"tau", c.tau},
       {"use_pointfix_net", c.use_pointfix_net},
       {"use_meta_learning", c.use_meta_learning},
       {"use_online_adapt_stage", c.use_online_adapt_stage},
       {"residual_learning", c.residual_learning},
       {"second_order", c.second_order},
       {"loss_norm", loss_norm_name(c.loss_norm)},
       {"outer_optimizer", c.outer_optimizer},
       {"crop_height", c.crop_height},
       {"crop_width", c.crop_width},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.iterations = j.value("iterations", d.iterations);
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.alpha_phase2 = j.value("alpha_phase2", d.alpha_phase2);
  c.phase2_start = j.value("phase2_start", d.phase2_start);
  c.tau = j.value("tau", d.tau);
  c.use_pointfix_net = j.value("use_pointfix_net", d.use_pointfix_net);
  c.use_meta_learning = j.value("use_meta_learning", d.use_meta_learning);
  c.use_online_adapt_stage = j.value("use_online_adapt_stage", d.use_online_adapt_stage);
  c.residual_learning = j.value("residual_learning", d.residual_learning);
  c.second_order = j.value("second_order", d.second_order);
  c.loss_norm = loss_norm_from_name(j.value("loss_norm", std::string(loss_norm_name(d.loss_norm))));
  c.outer_optimizer = j.value("outer_optimizer", d.outer_optimizer);
  c.crop_height = j.value("crop_height", d.crop_height);
  c.crop_width = j.value("crop_width", d.crop_width);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

// ---------------------------------------------------------------------------
// Losses

/// Mean |pred - gt| over valid pixels (0 when nothing is valid).
template <typename T>
Tensor<T> masked_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  if (pred.shape() != gt.shape() || pred.shape() != valid.shape())
    throw std::invalid_argument("masked_l1: shape mismatch");
  double n = 0;
  for (T v : valid.values()) n += double(v);
  if (n <= 0) return Tensor<T>::scalar(T(0));
  return scale(sum(mul(abs(sub(pred, gt)), valid)), T(1.0 / n));
}

/// Multi-level supervised L1: every pyramid level upsampled to full
/// resolution, weighted proportionally to its resolution (1/stride^2).
template <typename T>
Tensor<T> base_loss(const StereoPrediction<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  double wsum = 0;
  for (auto s : pred.strides) wsum += 1.0 / double(s * s);
  Tensor<T> total;
  for (std::size_t i = 0; i < pred.pyramid.size(); ++i) {
    const double w = 1.0 / double(pred.strides[i] * pred.strides[i]) / wsum;
    const Tensor<T> li = scale(masked_l1(pred.upsampled(i), gt, valid), T(w));
    total = total.defined() ? add(total, li) : li;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Batches

/// Window of a frame. Left pixels whose match falls left of the window become
/// invalid.
template <typename T>
StereoFrame<T> crop_frame(const StereoFrame<T>& f, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const std::size_t H = f.height(), W = f.width();
  if (y0 + h > H || x0 + w > W) throw std::invalid_argument("crop_frame: window outside frame");
  auto crop = [&](const Tensor<T>& t, std::size_t c) {
    std::vector<T> v(h * w * c);
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(t.vec().data() + ((y0 + y) * W + x0) * c, w * c, v.data() + y * w * c);
    return v;
  };
  auto valid = crop(f.valid_mask, 1);
  const auto gt = crop(f.gt_disparity, 1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (double(x) - double(gt[y * w + x]) < 0) valid[y * w + x] = T(0);
  return {Tensor<T>::constant({h, w, 3}, crop(f.left, 3)), Tensor<T>::constant({h, w, 3}, crop(f.right, 3)),
          Tensor<T>::constant({h, w}, gt), Tensor<T>::constant({h, w}, std::move(valid))};
}

/// Deterministic batch for iteration k: frames drawn uniformly over all frames
/// of all sequences, then optionally cropped at a random window (clamped to
/// the frame size).
template <typename T>
std::vector<StereoFrame<T>> sample_batch(const std::vector<Sequence<T>>& data, std::size_t n, std::uint64_t seed,
                                         std::size_t k, std::size_t crop_h = 0, std::size_t crop_w = 0) {
  std::size_t total = 0;
  for (const auto& s : data) total += s.frames.size();
  if (total == 0) throw std::invalid_argument("sample_batch: empty dataset");
  std::mt19937_64 rng(detail::splitmix64(seed * 0x9E3779B97F4A7C15ull ^ detail::splitmix64(k + 1)));
  std::vector<StereoFrame<T>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
    const StereoFrame<T>* f = nullptr;
    for (const auto& s : data) {
      if (j < s.frames.size()) {
        f = &s.frames[j];
        break;
      }
      j -= s.frames.size();
    }
    const std::size_t ch = crop_h ? std::min(crop_h, f->height()) : f->height();
    const std::size_t cw = crop_w ? std::min(crop_w, f->width()) : f->width();
    if (ch == f->height() && cw == f->width()) {
      out.push_back(*f);
      continue;
    }
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, f->height() - ch)(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, f->width() - cw)(rng);
    out.push_back(crop_frame(*f, y0, x0, ch, cw));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  std::size_t steps = 400;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  std::size_t crop_height = 0;
  std::size_t crop_width = 0;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"steps", c.steps}, {"batch_size", c.batch_size}, {"lr", c.lr},
       {"crop_height", c.crop_height}, {"crop_width", c.crop_width}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  PretrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.crop_height = j.value("crop_height", d.crop_height);
  c.crop_width = j.value("crop_width", d.crop_width);
  c.seed = j.value("seed", d.seed);
}

/// Adam on the multi-level supervised loss; returns theta and the per-step loss.
template <typename T>
std::pair<ParamSet<T>, std::vector<double>> pretrain(const StereoModelConfig& model,
                                                     const std::vector<Sequence<T>>& data,
                                                     const PretrainConfig& cfg,
                                                     const ParamSet<T>* init = nullptr) {
  if (data.empty()) throw std::invalid_argument("pretrain: empty dataset");
  ParamSet<T> theta = init ? init->as_leaves() : init_stereo_model<T>(model, cfg.seed);
  Optimizer<T> opt(OptimizerKind::adam, cfg.lr);
  std::vector<double> losses;
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    const auto batch = sample_batch(data, cfg.batch_size, cfg.seed ^ 0x5052455452ull, k, cfg.crop_height, cfg.crop_width);
    Tensor<T> loss;
    for (const auto& f : batch) {
      const Tensor<T> l = base_loss(predict(f, theta, model), f.gt_disparity, f.valid_mask);
      loss = loss.defined() ? add(loss, l) : l;
    }
    loss = scale(loss, T(1.0 / double(batch.size())));
    losses.push_back(double(loss.item()));
    theta = opt.step(theta, grad(loss, theta));
  }
  return {theta, losses};
}

// ---------------------------------------------------------------------------
// Point update

template <typename T>
struct PointUpdateResult {
  ParamSet<T> theta;
  PointFixParams<T> psi;
  double loss = 0;           ///< accumulated inner loss
  std::size_t points = 0;    ///< selected points over the batch
  bool skipped = false;      ///< nothing to fix: parameters returned unchanged
};

/// Inner loss of one frame at theta: point loss over the selected points, or
/// the full-map L1 when the auxiliary net is disabled. Sets `points`.
template <typename T>
Tensor<T> inner_loss(const StereoFrame<T>& f, const ParamSet<T>& theta, const PointFixParams<T>& psi,
                     const NetConfig& net, const TrainConfig& cfg, std::size_t& points) {
  const StereoPrediction<T> pred = predict(f, theta, net.stereo);
  if (!cfg.use_pointfix_net) {
    points = 0;
    for (T v : f.valid_mask.values()) points += v > T(0.5);
    return masked_l1(pred.disparity, f.gt_disparity, f.valid_mask);
  }
  const PointSet ps = select_points(pred.disparity, f.gt_disparity, f.valid_mask, cfg.tau);
  points = ps.size();
  if (ps.empty()) return Tensor<T>::scalar(T(0));
  const Tensor<T> zc = context_features(f.left, pred.disparity, f.gt_disparity, f.valid_mask, psi.context, net.pointfix);
  const Tensor<T> r = residuals(pred.base_feature, zc, ps, psi.head, net.pointfix, pred.base_stride);
  return point_loss(pred.disparity, r, f.gt_disparity, ps, cfg.loss_norm, cfg.residual_learning);
}

/// One gradient step of lr alpha on the inner loss accumulated over `batch`.
/// With create_graph the result stays differentiable w.r.t. theta and psi.
template <typename T>
PointUpdateResult<T> point_update(const std::vector<StereoFrame<T>>& batch, T alpha, const ParamSet<T>& theta,
                                  const PointFixParams<T>& psi, const NetConfig& net, const TrainConfig& cfg,
                                  bool create_graph = false) {
  if (batch.empty()) throw std::invalid_argument("point_update: empty batch");
  PointUpdateResult<T> out{theta, psi};
  Tensor<T> loss;
  for (const auto& f : batch) {
    std::size_t n = 0;
    const Tensor<T> l = inner_loss(f, theta, psi, net, cfg, n);
    out.points += n;
    if (n == 0) continue;
    loss = loss.defined() ? add(loss, l) : l;
  }
  if (!loss.defined()) {
    out.skipped = true;
    return out;
  }
  out.loss = double(loss.item());
  if (alpha == T(0)) return out;
  if (cfg.use_pointfix_net) {
    const auto g = grad(loss, {&theta, &psi.context, &psi.head}, create_graph);
    out.theta = sgd_step(theta, g[0], alpha);
    out.psi.context = sgd_step(psi.context, g[1], alpha);
    out.psi.head = sgd_step(psi.head, g[2], alpha);
  } else {
    out.theta = sgd_step(theta, grad(loss, theta, create_graph), alpha);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Meta step

template <typename T>
struct TrainState {
  std::size_t iteration = 0;  ///< completed iterations
  ParamSet<T> theta;
  PointFixParams<T> psi;
  Optimizer<T> opt_theta, opt_context, opt_head;
};

struct TrainRecord {
  std::size_t iter = 0;
  double base_loss = 0;    ///< L_k, summed over the batch
  double point_loss = 0;   ///< mean inner loss per sample
  double n_points = 0;     ///< mean selected points per sample
  double seconds = 0;
};

template <typename T>
TrainState<T> make_train_state(const ParamSet<T>& theta, const PointFixParams<T>& psi, const TrainConfig& cfg) {
  cfg.validate();
  const auto kind = optimizer_from_name(cfg.outer_optimizer);
  return {0, theta.as_leaves(), {psi.context.as_leaves(), psi.head.as_leaves()},
          Optimizer<T>(kind, cfg.beta), Optimizer<T>(kind, cfg.beta), Optimizer<T>(kind, cfg.beta)};
}

/// Meta objective sum_n L_b(F(theta_n')) where theta_n' is the inner update
/// on sample n; differentiable w.r.t. the pre-update theta and psi.
template <typename T>
Tensor<T> meta_objective(const std::vector<StereoFrame<T>>& batch, const ParamSet<T>& theta,
                         const PointFixParams<T>& psi, const NetConfig& net, const TrainConfig& cfg,
                         T alpha, double* point_loss_out = nullptr, double* points_out = nullptr) {
  Tensor<T> total;
  double pl = 0, np = 0;
  for (const auto& f : batch) {
    const auto inner = point_update(std::vector<StereoFrame<T>>{f}, alpha, theta, psi, net, cfg, cfg.second_order);
    pl += inner.loss;
    np += double(inner.points);
    const Tensor<T> lb = base_loss(predict(f, inner.theta, net.stereo), f.gt_disparity, f.valid_mask);
    total = total.defined() ? add(total, lb) : lb;
  }
  if (point_loss_out) *point_loss_out = pl / double(batch.size());
  if (points_out) *points_out = np / double(batch.size());
  return total;
}

/// Joint objective without meta-learning: sum_n L_b + L_p at theta.
template <typename T>
Tensor<T> joint_objective(const std::vector<StereoFrame<T>>& batch, const ParamSet<T>& theta,
                          const PointFixParams<T>& psi, const NetConfig& net, const TrainConfig& cfg,
                          double* base_out = nullptr, double* point_loss_out = nullptr,
                          double* points_out = nullptr) {
  Tensor<T> total;
  double lb_sum = 0, pl = 0, np = 0;
  for (const auto& f : batch) {
    const StereoPrediction<T> pred = predict(f, theta, net.stereo);
    Tensor<T> l = base_loss(pred, f.gt_disparity, f.valid_mask);
    lb_sum += double(l.item());
    if (cfg.use_pointfix_net) {
      const PointSet ps = select_points(pred.disparity, f.gt_disparity, f.valid_mask, cfg.tau);
      np += double(ps.size());
      if (!ps.empty()) {
        const Tensor<T> zc = context_features(f.left, pred.disparity, f.gt_disparity, f.valid_mask, psi.context, net.pointfix);
        const Tensor<T> r = residuals(pred.base_feature, zc, ps, psi.head, net.pointfix, pred.base_stride);
        const Tensor<T> lp = point_loss(pred.disparity, r, f.gt_disparity, ps, cfg.loss_norm, cfg.residual_learning);
        pl += double(lp.item());
        l = add(l, lp);
      }
    }
    total = total.defined() ? add(total, l) : l;
  }
  const double n = double(batch.size());
  if (base_out) *base_out = lb_sum;
  if (point_loss_out) *point_loss_out = pl / n;
  if (points_out) *points_out = np / n;
  return total;
}

/// One training iteration on `batch`, updating `state` in place.
template <typename T>
TrainRecord meta_step(const std::vector<StereoFrame<T>>& batch, const TrainConfig& cfg, const NetConfig& net,
                      TrainState<T>& state) {
  if (batch.size() != cfg.batch_size) throw std::invalid_argument("meta_step: batch size mismatch");
  const auto t0 = std::chrono::steady_clock::now();
  TrainRecord rec;
  rec.iter = state.iteration;
  const T alpha = T(cfg.alpha_at(state.iteration));
  const ParamSet<T>& theta = state.theta;
  const PointFixParams<T>& psi = state.psi;
  const bool psi_trained = cfg.use_pointfix_net;

  ParamSet<T> g_theta(theta.role()), g_ctx(psi.context.role()), g_head(psi.head.role());
  if (cfg.use_meta_learning) {
    // Per-sample objectives keep one inner graph alive at a time.
    bool first = true;
    for (const auto& f : batch) {
      double pl = 0, np = 0;
      const Tensor<T> lk = meta_objective(std::vector<StereoFrame<T>>{f}, theta, psi, net, cfg, alpha, &pl, &np);
      rec.base_loss += double(lk.item());
      rec.point_loss += pl / double(batch.size());
      rec.n_points += np / double(batch.size());
      auto g = grad(lk, {&theta, &psi.context, &psi.head});
      if (first) {
        g_theta = g[0], g_ctx = g[1], g_head = g[2];
        first = false;
      } else {
        g_theta = add_params(g_theta, g[0]);
        g_ctx = add_params(g_ctx, g[1]);
        g_head = add_params(g_head, g[2]);
      }
    }
  } else {
    const Tensor<T> lk = joint_objective(batch, theta, psi, net, cfg, &rec.base_loss, &rec.point_loss, &rec.n_points);
    auto g = grad(lk, {&theta, &psi.context, &psi.head});
    g_theta = g[0], g_ctx = g[1], g_head = g[2];
  }

  ParamSet<T> theta_next = state.opt_theta.step(theta, g_theta);
  PointFixParams<T> psi_next = psi;
  if (psi_trained) {
    psi_next.context = state.opt_context.step(psi.context, g_ctx);
    psi_next.head = state.opt_head.step(psi.head, g_head);
  }

  if (cfg.use_meta_learning && cfg.use_online_adapt_stage) {
    const auto upd = point_update(batch, alpha, theta_next, psi_next, net, cfg, false);
    theta_next = upd.theta.as_leaves();
    psi_next = {upd.psi.context.as_leaves(), upd.psi.head.as_leaves()};
  }
  state.theta = std::move(theta_next);
  state.psi = std::move(psi_next);
  ++state.iteration;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// Runs iterations state.iteration .. cfg.iterations - 1. `on_checkpoint` is
/// called after every checkpoint_every-th iteration with the updated state.
template <typename T>
std::vector<TrainRecord> train(const TrainConfig& cfg, const NetConfig& net, const std::vector<Sequence<T>>& data,
                               TrainState<T>& state,
                               const std::function<void(const TrainState<T>&)>& on_checkpoint = {},
                               const std::function<void(const TrainRecord&)>& on_record = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  std::vector<TrainRecord> log;
  while (state.iteration < cfg.iterations) {
    const auto batch = sample_batch(data, cfg.batch_size, cfg.seed, state.iteration, cfg.crop_height, cfg.crop_width);
    log.push_back(meta_step(batch, cfg, net, state));
    if (on_record) on_record(log.back());
    if (on_checkpoint && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0)
      on_checkpoint(state);
  }
  return log;
}

}  // namespace pointfix
