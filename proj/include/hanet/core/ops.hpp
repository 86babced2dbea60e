#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hanet/core/autograd.hpp"
#include "hanet/core/rng.hpp"

namespace hanet::core {

enum class Mode { Train, Eval };
enum class PoolMode { Avg, Max };

inline constexpr std::uint8_t kIgnoreLabel = 255;

// ---- convolution ---------------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
};

// x: N x Cin x H x W, weight: Cout x Cin x KH x KW (odd extents), bias: Cout.
// Zero padding of dilation*(K-1)/2 per side.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts = {});

// x: N x Cin x L, weight: Cout x Cin x K (K odd), bias: Cout. "Same" padding,
// output length equals input length.
Var conv1d(const Var& x, const Var& weight, const Var& bias);

// ---- pooling and resampling ----------------------------------------------

// x: N x C x H x W -> N x C x H x 1, mean or max over the width axis.
Var pool_width(const Var& x, PoolMode mode);

/// Sparse linear map from a source axis of length `source` to `taps.size()`
/// target positions: target j = sum over (i, w) in taps[j] of w * source[i].
struct ResampleMap {
  std::size_t source = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> taps;
};

// Output row j averages input rows [floor(j*H/T), ceil((j+1)*H/T)).
ResampleMap adaptive_average_map(std::size_t source, std::size_t target);
// Align-to-centers linear interpolation with clamping at both ends.
ResampleMap linear_map(std::size_t source, std::size_t target);
// Adaptive average when shrinking, linear when growing, identity otherwise.
ResampleMap height_map(std::size_t source, std::size_t target);

// Applies `map` along `axis` of x.
Var resample_axis(const Var& x, std::size_t axis, const ResampleMap& map);

// Resamples the last axis (height) of a C x H or N x C x H tensor.
Var resample_height(const Var& x, std::size_t target);

// Bilinear resize of an N x C x H x W map (separable, align-to-centers).
Var upsample_bilinear(const Var& x, std::size_t height, std::size_t width);

// ---- elementwise -----------------------------------------------------------

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);

// gate: N x C x H, x: N x C x H x W. out[n,c,h,w] = gate[n,c,h] * x[n,c,h,w].
Var gate_rows(const Var& gate, const Var& x);

// Concatenates N x Ci x H x W maps along the channel axis.
Var concat_channels(const std::vector<Var>& parts);

Var reshape(const Var& x, Shape shape);

// ---- normalization and regularization -------------------------------------

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels ? channels : 1}, 0.0), running_var(Shape{channels ? channels : 1}, 1.0) {}
};

// x: N x C x L, normalized per channel over the N and L axes in train mode
// (running statistics updated), with running statistics in eval mode.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);

// Inverted dropout: kept entries are scaled by 1/(1-p). Identity in eval mode.
Var dropout(const Var& x, double p, Mode mode, Rng& rng);

// ---- losses ----------------------------------------------------------------

// logits: N x K x H x W, labels: N*H*W ids (kIgnoreLabel skipped). Mean over
// non-ignored pixels; zero when every pixel is ignored.
Var softmax_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels);

Var sum(const Var& x);
Var mean(const Var& x);
// mean((x - target)^2)
Var mean_square_error(const Var& x, const Tensor& target);

}  // namespace hanet::core
