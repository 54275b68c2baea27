#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vdd/core/tensor.hpp"

namespace vdd {

// Reverse-mode autodiff over a dynamically built graph. Nodes hold their
// forward value and a closure that scatters the node's gradient into its
// parents. Graphs are rebuilt every step and freed when the step's Vars go
// out of scope; parameters are long-lived nodes owned by a ParamStore.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.numel() == 0) grad = Tensor<T>(value.shape());
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }

  static Var param(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& val() const { return node_->value; }
  Tensor<T>& val() { return node_->value; }
  Tensor<T>& grad() { return node_->grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Scalar convenience for loss values.
  T item() const { return node_->value[0]; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op node. The backward closure receives the node (with its grad
// populated) and is responsible for accumulating into parent grads; it is
// dropped entirely when no parent needs gradients.
template <typename T, typename F>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, F&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p.defined() && p.node()->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::forward<F>(backward);
  }
  return Var<T>(std::move(n));
}

// Reverse topological sweep from a scalar root. Seeds d(root)/d(root) = 1.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad.fill(T(0));
  root.node()->grad[0] = T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.numel() > 0) n->backward_fn(*n);
  }
}

namespace detail {

template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& p, const Tensor<T>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  T* dst = p->grad.data();
  const T* src = g.data();
  for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

}  // namespace vdd
