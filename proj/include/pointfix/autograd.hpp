#pragma once

#include <pointfix/tensor.hpp>

#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace pointfix {

/// Reverse-mode gradients of a scalar `loss` with respect to each tensor in
/// `wrt`. Tensors that the loss does not depend on get a zero gradient. With
/// `create_graph` the returned gradients carry their own graph and can be
/// differentiated again.
template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, const std::vector<Tensor<T>>& wrt,
                            bool create_graph = false) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("grad: loss must be a scalar");

  // Post-order DFS over the recorded graph.
  std::vector<Node<T>*> order;
  if (loss.requires_grad()) {
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        Node<T>* child = n->inputs[next++].node();
        if (child && child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<Node<T>*> targets;
  for (const auto& w : wrt) targets.insert(w.node());

  GradModeGuard mode(create_graph);
  std::unordered_map<Node<T>*, Tensor<T>> acc;
  if (loss.requires_grad()) acc[loss.node()] = Tensor<T>::full(loss.shape(), T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward) continue;
    auto found = acc.find(n);
    if (found == acc.end()) continue;
    const Tensor<T> g = found->second;
    if (!targets.count(n)) acc.erase(found);
    const auto parts = n->backward(g);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      const Tensor<T>& in = n->inputs[i];
      if (!in.requires_grad() || i >= parts.size() || !parts[i].defined()) continue;
      auto slot = acc.find(in.node());
      if (slot == acc.end())
        acc.emplace(in.node(), parts[i]);
      else
        slot->second = add(slot->second, parts[i]);
    }
  }

  std::vector<Tensor<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = acc.find(w.node());
    if (found == acc.end())
      out.push_back(Tensor<T>::zeros(w.shape()));
    else
      out.push_back(create_graph ? found->second : found->second.detach());
  }
  return out;
}

}  // namespace pointfix
