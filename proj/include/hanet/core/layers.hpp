#pragma once

#include "hanet/core/ops.hpp"

namespace hanet::core {

// Kernel Cout x Cin x K (K odd), bias Cout.
struct Conv1dParams {
  Var kernel;
  Var bias;

  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t kernel_size() const { return kernel.dim(2); }
};

// Kernel Cout x Cin x K x K, bias Cout.
struct Conv2dParams {
  Var kernel;
  Var bias;
};

struct BatchNormParams {
  Var gamma;
  Var beta;
  BatchNormState state;
};

// Kernel entries uniform on [-bound, bound] with bound = gain / sqrt(fan_in);
// biases zero.
Conv1dParams make_conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, double gain,
                         Rng& rng);
Conv2dParams make_conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, double gain,
                         Rng& rng);
// Identity affine transform (gamma = 1, beta = 0).
BatchNormParams make_batch_norm(std::size_t channels);

inline Var apply(const Conv1dParams& p, const Var& x) { return conv1d(x, p.kernel, p.bias); }
inline Var apply(const Conv2dParams& p, const Var& x, Conv2dOptions opts = {}) {
  return conv2d(x, p.kernel, p.bias, opts);
}
inline Var apply(BatchNormParams& p, const Var& x, Mode mode) {
  return batch_norm(x, p.gamma, p.beta, p.state, mode);
}

}  // namespace hanet::core
