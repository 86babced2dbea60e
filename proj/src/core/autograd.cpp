#include "hanet/core/autograd.hpp"

#include <unordered_set>

#include "hanet/core/errors.hpp"

namespace hanet::core {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::zeros_like(value);
  return grad;
}

Var Var::detach() const { return constant(node_->value); }

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward expects a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

}  // namespace hanet::core
