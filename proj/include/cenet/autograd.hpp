#pragma once

#include "cenet/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cenet {

/// One vertex of the reverse-mode graph.
///
/// Leaves created through Var::parameter() keep their gradient across
/// backward() calls until zero_grad(); interior gradients are reset at the
/// start of every backward() so a graph can be differentiated for several
/// roots in turn.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  // Set when a backward pass reached this node; the optimizer skips
  // parameters that were not reached.
  bool touched = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<Scalar>& grad_buffer() {
    if (grad.shape != value.shape || grad.size() != value.size()) grad = Tensor<Scalar>(value.shape);
    return grad;
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for its lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar_>
class Var {
 public:
  using Scalar = Scalar_;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<Scalar> value) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  Index dim(Index i) const { return node_->value.dim(i); }
  Index size() const { return node_->value.size(); }
  Scalar item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool touched() const { return node_->touched; }

  /// Gradient accumulated so far; zeros if no backward pass reached this node.
  const Tensor<Scalar>& grad() const { return node_->grad_buffer(); }
  Tensor<Scalar>& mutable_grad() { return node_->grad_buffer(); }

  void zero_grad() {
    node_->grad_buffer().data.setZero();
    node_->touched = false;
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Records an operation result. Returns a constant when recording is off or
/// no input needs a gradient.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs,
                        std::function<void(Node<Scalar>&)> backward) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  if (!grad_enabled()) return Var<Scalar>(std::move(n));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return Var<Scalar>(std::move(n));
  n->requires_grad = true;
  n->is_leaf = false;
  n->parents.reserve(inputs.size());
  for (auto& in : inputs) n->parents.push_back(in.node());
  n->backward = std::move(backward);
  return Var<Scalar>(std::move(n));
}

/// Adds `g` into the gradient of parent `i` of `self` if it needs one.
template <typename Scalar, typename Expr>
void accumulate(Node<Scalar>& self, std::size_t i, const Expr& g) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return;
  p.grad_buffer().data += g;
}

template <typename Scalar>
bool wants_grad(const Node<Scalar>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

template <typename Scalar>
Tensor<Scalar>& parent_grad(Node<Scalar>& self, std::size_t i) {
  return self.parents[i]->grad_buffer();
}

template <typename Scalar>
const Tensor<Scalar>& parent_value(const Node<Scalar>& self, std::size_t i) {
  return self.parents[i]->value;
}

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  require(root.defined() && root.size() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<Scalar>* n : order) {
    n->touched = true;
    if (!n->is_leaf) n->grad_buffer().data.setZero();
  }
  root.node()->grad_buffer().data.setConstant(Scalar(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

}  // namespace cenet
