// Value-level optimisers over ParamSets (no graph). Used for outer-loop,
// pretraining and test-time updates; differentiable inner steps go through
// sgd_step instead.
#pragma once

#include <pointfix/param_set.hpp>

#include <cmath>
#include <map>
#include <string>

namespace pointfix {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}
inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

/// Optimiser for one ParamSet. Adam keeps per-entry moments and step counts,
/// so updating a subset of entries leaves the state of the others untouched.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr < 0) throw std::invalid_argument("Optimizer: negative learning rate");
  }

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  /// New leaves for every entry of `params`; entries absent from `grads` are
  /// kept as they are.
  ParamSet<T> step(const ParamSet<T>& params, const ParamSet<T>& grads) {
    ParamSet<T> out(params.role());
    for (const auto& [name, p] : params.entries()) {
      if (!grads.contains(name)) {
        out.add(name, p);
        continue;
      }
      const Tensor<T>& g = grads.at(name);
      if (g.shape() != p.shape()) throw std::invalid_argument("Optimizer: gradient shape mismatch for " + name);
      out.add(name, Tensor<T>::parameter(p.shape(), update(name, p.vec(), g.vec())));
    }
    return out;
  }

  /// Moments as ParamSets named "m.<entry>" / "v.<entry>", and step counts.
  ParamSet<T> state_params(ParamRole role) const {
    ParamSet<T> out(role);
    for (const auto& [name, s] : state_) {
      out.add("m." + name, Tensor<T>::constant({s.m.size()}, s.m));
      out.add("v." + name, Tensor<T>::constant({s.v.size()}, s.v));
    }
    return out;
  }
  std::map<std::string, std::size_t> step_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& [name, s] : state_) out[name] = s.t;
    return out;
  }
  void restore(const ParamSet<T>& moments, const std::map<std::string, std::size_t>& counts) {
    state_.clear();
    for (const auto& [name, t] : counts) {
      Slot s;
      s.t = t;
      s.m = moments.at("m." + name).vec();
      s.v = moments.at("v." + name).vec();
      state_.emplace(name, std::move(s));
    }
  }
  void reset() { state_.clear(); }

 private:
  struct Slot {
    std::size_t t = 0;
    std::vector<T> m, v;
  };

  std::vector<T> update(const std::string& name, const std::vector<T>& p, const std::vector<T>& g) {
    std::vector<T> out(p.size());
    const T lr = T(lr_);
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] - lr * g[i];
      return out;
    }
    Slot& s = state_[name];
    if (s.m.empty()) {
      s.m.assign(p.size(), T(0));
      s.v.assign(p.size(), T(0));
    }
    ++s.t;
    const T b1 = T(beta1_), b2 = T(beta2_), eps = T(eps_);
    const T c1 = T(1) - T(std::pow(beta1_, double(s.t)));
    const T c2 = T(1) - T(std::pow(beta2_, double(s.t)));
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m[i] = b1 * s.m[i] + (T(1) - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (T(1) - b2) * g[i] * g[i];
      out[i] = p[i] - lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
    }
    return out;
  }

  OptimizerKind kind_ = OptimizerKind::sgd;
  double lr_ = 0;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::map<std::string, Slot> state_;
};

}  // namespace pointfix
