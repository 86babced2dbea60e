#include "hanet/core/optim.hpp"

#include <cmath>

#include "hanet/core/errors.hpp"

namespace hanet::core {

SgdMomentum::SgdMomentum(std::vector<ParamGroup> groups, double momentum)
    : groups_(std::move(groups)), momentum_(momentum) {
  velocity_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (const auto& p : groups_[g].params) velocity_[g].push_back(Tensor::zeros_like(p.value()));
  }
}

void SgdMomentum::step(double lr) {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const double wd = groups_[g].weight_decay;
    for (std::size_t k = 0; k < groups_[g].params.size(); ++k) {
      Var& p = groups_[g].params[k];
      Tensor& v = velocity_[g][k];
      Tensor& theta = p.mutable_value();
      const bool has_grad = p.has_grad();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double grad = (has_grad ? p.grad()[i] : 0.0) + wd * theta[i];
        v[i] = momentum_ * v[i] + grad;
        theta[i] -= lr * v[i];
      }
    }
  }
}

void SgdMomentum::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.zero_grad();
}

double poly_lr(double base_lr, std::size_t iteration, std::size_t max_iteration, double power) {
  if (iteration > max_iteration) throw ConfigError("poly_lr: iteration exceeds max_iteration");
  if (max_iteration == 0) return 0.0;
  const double frac = 1.0 - static_cast<double>(iteration) / static_cast<double>(max_iteration);
  return base_lr * std::pow(frac, power);
}

}  // namespace hanet::core
