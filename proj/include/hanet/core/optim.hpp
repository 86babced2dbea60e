#pragma once

#include <string>
#include <vector>

#include "hanet/core/autograd.hpp"

namespace hanet::core {

struct ParamGroup {
  std::string name;
  std::vector<Var> params;
  double weight_decay = 0.0;
};

/// SGD with heavy-ball momentum and per-group L2 weight decay:
///   v <- momentum * v + (g + wd * theta);  theta <- theta - lr * v
class SgdMomentum {
 public:
  SgdMomentum(std::vector<ParamGroup> groups, double momentum);

  void step(double lr);
  void zero_grad();

  const std::vector<ParamGroup>& groups() const { return groups_; }
  double momentum() const { return momentum_; }

 private:
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Tensor>> velocity_;
  double momentum_;
};

// Polynomial decay: base_lr * (1 - iteration / max_iteration)^power.
double poly_lr(double base_lr, std::size_t iteration, std::size_t max_iteration, double power);

}  // namespace hanet::core
