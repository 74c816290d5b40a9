#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "prostseg/nn/tensor.hpp"

namespace prostseg::nn {

// Define-by-run reverse-mode tape. Every op produces a fresh node; creation
// order is a valid topological order, so backward() just replays it in
// reverse. When gradients are globally disabled (inference), ops skip parent
// recording and intermediate values free as soon as the last reference dies.

inline thread_local bool g_grad_enabled = true;
inline thread_local std::uint64_t g_node_counter = 0;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand during backward
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backprop;  // accumulates this->grad into parents' grads

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.n, value.h, value.w, value.c);
  }
};

template <typename T>
using NodeRef = std::shared_ptr<Node<T>>;

template <typename T>
NodeRef<T> make_node(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->order = ++g_node_counter;
  return n;
}

/// Leaf node (parameter or input).
template <typename T>
NodeRef<T> make_leaf(Tensor<T> value, bool requires_grad) {
  auto n = make_node(std::move(value));
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
bool any_requires_grad(std::initializer_list<const NodeRef<T>*> nodes) {
  if (!g_grad_enabled) return false;
  for (const auto* n : nodes)
    if (*n && (*n)->requires_grad) return true;
  return false;
}

/// Reverse-mode sweep from `root` (typically the scalar loss). Gradients of
/// every reachable node are reset, then filled; leaves keep theirs for the
/// optimizer to consume.
template <typename T>
void backward(const NodeRef<T>& root) {
  std::vector<Node<T>*> reachable;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (!n || !seen.insert(n).second) continue;
    reachable.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(reachable.begin(), reachable.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->order > b->order; });

  for (Node<T>* n : reachable) {
    n->ensure_grad();
    n->grad.fill(T{0});
  }
  root->grad.fill(T{1});
  for (Node<T>* n : reachable)
    if (n->backprop) n->backprop();
}

}  // namespace prostseg::nn
