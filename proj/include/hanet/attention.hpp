#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hanet/core/gradcheck.hpp"
#include "hanet/core/layers.hpp"
#include "hanet/posenc.hpp"

namespace hanet::attention {

using core::Mode;
using core::PoolMode;
using core::Var;
using posenc::PeMode;

PoolMode parse_pool_mode(const std::string& text);
std::string to_string(PoolMode mode);

struct HANetConfig {
  std::size_t in_channels = 0;   // C_l, channels of the map the context is pooled from
  std::size_t out_channels = 0;  // C_h, channels of the map being gated
  std::size_t coarse_height = 16;
  std::size_t reduction = 32;
  PoolMode pool = PoolMode::Avg;
  PeMode pe_mode = PeMode::Sinusoidal;
  std::size_t pe_layer = 2;  // 1-based index of the conv whose input receives the encoding
  std::size_t jitter_max = 2;
  double dropout_p = 0.1;
  std::size_t kernel_size = 3;

  // C_l / r, floor division; validate() rejects zero.
  std::size_t reduced_channels() const { return in_channels / reduction; }
  // Input channel count of conv `pe_layer`.
  std::size_t pe_channels() const;
  void validate() const;
};

struct HANetParams {
  core::Conv1dParams conv1;  // C_l -> C_l/r
  core::Conv1dParams conv2;  // C_l/r -> 2 C_l/r
  core::Conv1dParams conv3;  // 2 C_l/r -> C_h
  core::BatchNormParams norm1;
  core::BatchNormParams norm2;
  std::optional<posenc::PeTable> pe_table;

  static HANetParams init(const HANetConfig& config, core::Rng& rng);

  // Trainable tensors in a fixed order, names prefixed with `prefix`.
  std::vector<core::NamedVar> parameters(const std::string& prefix = "") const;
  // Batch-norm running statistics, as mutable references.
  std::vector<std::pair<std::string, core::Tensor*>> buffers(const std::string& prefix = "");
  std::size_t parameter_count() const;
};

// Closed-form trainable parameter count of the conv/norm/embedding chain.
std::size_t expected_parameter_count(const HANetConfig& config);

// x_l: N x C x H x W -> N x C x H (row statistics).
Var width_pool(const Var& x_l, PoolMode mode);

// z: N x C x H -> N x C x H_hat by adaptive averaging. H_hat > H is a
// configuration error.
Var coarsen(const Var& z, std::size_t coarse_height);

// z_hat: N x C_l x H_hat -> coarse attention N x C_h x H_hat, entries in (0,1).
// dropout -> conv1 -> bn -> relu -> conv2 -> bn -> relu -> conv3 -> sigmoid,
// with the position table added to the input of conv `pe_layer`. Train mode
// draws the dropout mask and per-sample position jitter from `rng`.
Var attention_from_context(const Var& z_hat, HANetParams& params, const HANetConfig& config, Mode mode,
                           core::Rng& rng);

// a_hat: N x C x H_hat -> N x C x H by linear interpolation (H >= H_hat).
Var expand_attention(const Var& a_hat, std::size_t height);

// out[n,c,h,w] = a[n,c,h] * x_h[n,c,h,w]
Var apply(const Var& attention, const Var& x_h);

struct HANetOutput {
  Var output;            // gated x_h
  Var attention;         // N x C_h x H_h
  Var coarse_attention;  // N x C_h x H_hat
};

HANetOutput forward(const Var& x_l, const Var& x_h, HANetParams& params, const HANetConfig& config, Mode mode,
                    core::Rng& rng);

}  // namespace hanet::attention
