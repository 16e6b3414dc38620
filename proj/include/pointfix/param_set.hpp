#pragma once

#include <pointfix/autograd.hpp>
#include <pointfix/tensor.hpp>

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pointfix {

enum class ParamRole { base, pointfix_context, pointfix_head };

inline std::string_view role_name(ParamRole r) {
  switch (r) {
    case ParamRole::base: return "base";
    case ParamRole::pointfix_context: return "pointfix_context";
    case ParamRole::pointfix_head: return "pointfix_head";
  }
  return "base";
}

inline ParamRole role_from_name(std::string_view s) {
  if (s == "base") return ParamRole::base;
  if (s == "pointfix_context") return ParamRole::pointfix_context;
  if (s == "pointfix_head") return ParamRole::pointfix_head;
  throw std::invalid_argument("unknown parameter role: " + std::string(s));
}

/// Named, insertion-ordered collection of the learnable arrays of one network.
/// Entries are immutable tensors, so copying a ParamSet is cheap and the copy
/// can never alias-mutate the original.
template <typename T>
class ParamSet {
 public:
  explicit ParamSet(ParamRole role = ParamRole::base) : role_(role) {}

  ParamRole role() const { return role_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no entry " + name);
    return entries_[it->second].second;
  }

  /// Replace the value of an existing entry (shape must match).
  void set(const std::string& name, Tensor<T> value) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no entry " + name);
    if (entries_[it->second].second.shape() != value.shape())
      throw std::invalid_argument("ParamSet::set: shape change for " + name);
    entries_[it->second].second = std::move(value);
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : entries_) out.push_back(n);
    return out;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  bool congruent(const ParamSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (entries_[i].first != other.entries_[i].first ||
          entries_[i].second.shape() != other.entries_[i].second.shape())
        return false;
    return true;
  }

  /// Fresh graph leaves holding the same values.
  ParamSet as_leaves() const {
    ParamSet out(role_);
    for (const auto& [n, t] : entries_) out.add(n, t.as_parameter());
    return out;
  }

  ParamSet detached() const {
    ParamSet out(role_);
    for (const auto& [n, t] : entries_) out.add(n, t.detach());
    return out;
  }

  /// Bitwise equality of names, shapes and values.
  bool identical(const ParamSet& other) const {
    if (!congruent(other)) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (entries_[i].second.vec() != other.entries_[i].second.vec()) return false;
    return true;
  }

 private:
  ParamRole role_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient of a scalar loss with respect to every entry of `params`.
template <typename T>
ParamSet<T> grad(const Tensor<T>& loss, const ParamSet<T>& params, bool create_graph = false) {
  const auto gs = grad(loss, params.tensors(), create_graph);
  ParamSet<T> out(params.role());
  std::size_t i = 0;
  for (const auto& [n, _] : params.entries()) out.add(n, gs[i++]);
  return out;
}

/// Gradients with respect to several sets from one backward pass.
template <typename T>
std::vector<ParamSet<T>> grad(const Tensor<T>& loss, const std::vector<const ParamSet<T>*>& sets,
                              bool create_graph = false) {
  std::vector<Tensor<T>> all;
  for (const auto* s : sets)
    for (const auto& t : s->tensors()) all.push_back(t);
  const auto gs = grad(loss, all, create_graph);
  std::vector<ParamSet<T>> out;
  std::size_t i = 0;
  for (const auto* s : sets) {
    ParamSet<T> g(s->role());
    for (const auto& [n, _] : s->entries()) g.add(n, gs[i++]);
    out.push_back(std::move(g));
  }
  return out;
}

/// p - lr * g for every entry. Differentiable when grad mode is on.
template <typename T>
ParamSet<T> sgd_step(const ParamSet<T>& params, const ParamSet<T>& grads, T lr) {
  if (!params.congruent(grads)) throw std::invalid_argument("sgd_step: incongruent parameter sets");
  if (lr < T(0)) throw std::invalid_argument("sgd_step: negative learning rate");
  ParamSet<T> out(params.role());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params.entries()[i];
    out.add(name, sub(p, scale(grads.entries()[i].second, lr)));
  }
  return out;
}

/// Entry-wise a + b of congruent sets.
template <typename T>
ParamSet<T> add_params(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (!a.congruent(b)) throw std::invalid_argument("add_params: incongruent parameter sets");
  ParamSet<T> out(a.role());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.add(a.entries()[i].first, add(a.entries()[i].second, b.entries()[i].second));
  return out;
}

/// Entries of `params` whose names are in `names`.
template <typename T>
ParamSet<T> subset(const ParamSet<T>& params, const std::vector<std::string>& names) {
  ParamSet<T> out(params.role());
  for (const auto& n : names) out.add(n, params.at(n));
  return out;
}

/// Copy of `params` with the entries present in `update` replaced.
template <typename T>
ParamSet<T> merged(const ParamSet<T>& params, const ParamSet<T>& update) {
  ParamSet<T> out = params;
  for (const auto& [n, t] : update.entries()) out.set(n, t);
  return out;
}

template <typename T, typename U>
ParamSet<U> cast_params(const ParamSet<T>& p) {
  ParamSet<U> out(p.role());
  for (const auto& [n, t] : p.entries()) out.add(n, t.template cast<U>());
  return out;
}

}  // namespace pointfix
