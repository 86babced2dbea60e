#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hanet/core/tensor.hpp"

namespace hanet::core {

struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

/// Handle to a value in the reverse-mode tape.
///
/// Leaves are created with `leaf` (trainable) or `constant`. Every op in
/// ops.hpp returns a new Var whose node remembers its parents; calling
/// `backward` on a scalar Var walks the graph in reverse topological order.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }

  void zero_grad() { node_->grad = Tensor(); }
  // Drops parents so the value can outlive the graph that produced it.
  Var detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

// Builds the result node for an op. `backward_fn` is dropped when no parent
// requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
void backward(const Var& loss);

}  // namespace hanet::core
