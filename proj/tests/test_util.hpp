#pragma once

#include "hanet/core/gradcheck.hpp"
#include "hanet/core/ops.hpp"

namespace hanet::testing {

inline core::Tensor random_tensor(core::Shape shape, core::Rng& rng, double scale = 1.0) {
  core::Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.normal(0.0, scale);
  return t;
}

// sum(out * w) with w a fixed random tensor, so every output entry
// contributes a distinct weight to the loss.
inline core::Var probe_loss(const core::Var& out, const core::Tensor& weights) {
  return core::sum(core::mul(out, core::constant(weights)));
}

}  // namespace hanet::testing
