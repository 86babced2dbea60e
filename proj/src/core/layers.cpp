#include "hanet/core/layers.hpp"

#include <cmath>

#include "hanet/core/errors.hpp"

namespace hanet::core {
namespace {

Tensor uniform_kernel(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Conv1dParams make_conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, double gain,
                         Rng& rng) {
  if (kernel_size % 2 == 0) throw ConfigError("conv1d kernel size must be odd");
  if (in_channels == 0 || out_channels == 0) throw ConfigError("conv1d channel counts must be positive");
  return {leaf(uniform_kernel({out_channels, in_channels, kernel_size}, in_channels * kernel_size, gain, rng)),
          leaf(Tensor(Shape{out_channels}))};
}

Conv2dParams make_conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, double gain,
                         Rng& rng) {
  if (kernel_size % 2 == 0) throw ConfigError("conv2d kernel size must be odd");
  if (in_channels == 0 || out_channels == 0) throw ConfigError("conv2d channel counts must be positive");
  return {leaf(uniform_kernel({out_channels, in_channels, kernel_size, kernel_size},
                              in_channels * kernel_size * kernel_size, gain, rng)),
          leaf(Tensor(Shape{out_channels}))};
}

BatchNormParams make_batch_norm(std::size_t channels) {
  return {leaf(Tensor(Shape{channels}, 1.0)), leaf(Tensor(Shape{channels}, 0.0)), BatchNormState(channels)};
}

}  // namespace hanet::core
