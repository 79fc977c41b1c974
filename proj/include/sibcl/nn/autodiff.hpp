#pragma once

// Tape-free reverse-mode differentiation over a DAG of shared nodes.
//
// Every op produces a Node holding its value, its inputs, and a closure that
// pushes the node's gradient into its inputs. backward() orders the reachable
// graph topologically and runs the closures once. A graph can be
// differentiated only once; after that the intermediate nodes drop their
// closures and gradients and a second call throws.

#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sibcl/nn/tensor.hpp"

namespace sibcl::nn {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& ensure_grad() {
    if (grad.numel() != value.numel() || grad.shape() != value.shape())
      grad = Tensor(value.shape(), Scalar(0));
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  // Result of an op. The backward closure is kept only when an input needs it.
  static Var from_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    Var out(std::move(value), false);
    out.node_->is_leaf = false;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      out.node_->backward = std::move(backward);
      out.node_->inputs.reserve(inputs.size());
      for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    }
    return out;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(Scalar(0));
  }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

  // Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node> node_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
inline void backward(const Var& loss) {
  if (!loss.defined()) throw ConfigError("backward on undefined variable");
  Node& root = loss.node();
  if (root.value.numel() != 1)
    throw ConfigError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
  if (root.consumed)
    throw ConfigError("backward called twice on the same graph; rebuild the forward pass first");
  if (!root.requires_grad) {
    root.consumed = true;
    return;
  }

  std::vector<Node*> order;
  std::vector<std::shared_ptr<Node>> keep;  // clearing inputs below must not free pending nodes
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      const auto& ptr = n->inputs[next++];
      Node* child = ptr.get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        keep.push_back(ptr);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.ensure_grad()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf) continue;
    if (n->backward && !n->grad.empty()) {
      for (auto& in : n->inputs)
        if (in->requires_grad) in->ensure_grad();
      n->backward(*n);
    }
    n->backward = nullptr;
    n->inputs.clear();
    n->grad = Tensor();
    n->consumed = true;
  }
  root.consumed = true;
}

}  // namespace sibcl::nn
