#include "hanet/attention.hpp"

#include "hanet/core/errors.hpp"

namespace hanet::attention {

using core::Tensor;

PoolMode parse_pool_mode(const std::string& text) {
  if (text == "avg") return PoolMode::Avg;
  if (text == "max") return PoolMode::Max;
  throw ConfigError("unknown pooling mode '" + text + "' (avg|max)");
}

std::string to_string(PoolMode mode) { return mode == PoolMode::Avg ? "avg" : "max"; }

std::size_t HANetConfig::pe_channels() const {
  switch (pe_layer) {
    case 1: return in_channels;
    case 2: return reduced_channels();
    case 3: return 2 * reduced_channels();
    default: throw ConfigError("pe_layer must be 1, 2 or 3");
  }
}

void HANetConfig::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ConfigError("HANet channel counts must be positive");
  if (reduction == 0) throw ConfigError("HANet reduction ratio must be positive");
  if (reduced_channels() == 0) {
    throw ConfigError("HANet reduction " + std::to_string(reduction) + " leaves no channels from " +
                      std::to_string(in_channels));
  }
  if (coarse_height == 0) throw ConfigError("HANet coarse height must be at least 1");
  if (pe_layer < 1 || pe_layer > 3) throw ConfigError("pe_layer must be 1, 2 or 3");
  if (kernel_size % 2 == 0) throw ConfigError("HANet kernel size must be odd");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("HANet dropout must be in [0, 1)");
  if (pe_mode == PeMode::Sinusoidal && pe_channels() < 2) {
    throw ConfigError("sinusoidal encoding at layer " + std::to_string(pe_layer) + " needs at least 2 channels");
  }
}

HANetParams HANetParams::init(const HANetConfig& config, core::Rng& rng) {
  config.validate();
  const std::size_t r = config.reduced_channels();
  const std::size_t k = config.kernel_size;
  HANetParams p{core::make_conv1d(config.in_channels, r, k, 1.0, rng),
                core::make_conv1d(r, 2 * r, k, 1.0, rng),
                core::make_conv1d(2 * r, config.out_channels, k, 1.0, rng),
                core::make_batch_norm(r),
                core::make_batch_norm(2 * r),
                std::nullopt};
  if (config.pe_mode == PeMode::Sinusoidal) {
    p.pe_table = posenc::sinusoidal_table(config.coarse_height, config.pe_channels());
  } else if (config.pe_mode == PeMode::Learnable) {
    p.pe_table = posenc::learnable_table(config.coarse_height, config.pe_channels(), rng);
  }
  return p;
}

std::vector<core::NamedVar> HANetParams::parameters(const std::string& prefix) const {
  std::vector<core::NamedVar> out{
      {prefix + "conv1.kernel", conv1.kernel}, {prefix + "conv1.bias", conv1.bias},
      {prefix + "norm1.gamma", norm1.gamma},   {prefix + "norm1.beta", norm1.beta},
      {prefix + "conv2.kernel", conv2.kernel}, {prefix + "conv2.bias", conv2.bias},
      {prefix + "norm2.gamma", norm2.gamma},   {prefix + "norm2.beta", norm2.beta},
      {prefix + "conv3.kernel", conv3.kernel}, {prefix + "conv3.bias", conv3.bias},
  };
  if (pe_table && pe_table->mode == PeMode::Learnable) out.emplace_back(prefix + "pe_table", pe_table->values);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> HANetParams::buffers(const std::string& prefix) {
  return {{prefix + "norm1.running_mean", &norm1.state.running_mean},
          {prefix + "norm1.running_var", &norm1.state.running_var},
          {prefix + "norm2.running_mean", &norm2.state.running_mean},
          {prefix + "norm2.running_var", &norm2.state.running_var}};
}

std::size_t HANetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : parameters()) n += v.value().size();
  return n;
}

std::size_t expected_parameter_count(const HANetConfig& config) {
  const std::size_t r = config.reduced_channels();
  const std::size_t k = config.kernel_size;
  std::size_t n = (config.in_channels * r * k + r) + (r * 2 * r * k + 2 * r) +
                  (2 * r * config.out_channels * k + config.out_channels);
  n += 2 * r + 2 * (2 * r);
  if (config.pe_mode == PeMode::Learnable) n += config.coarse_height * config.pe_channels();
  return n;
}

Var width_pool(const Var& x_l, PoolMode mode) {
  core::require_rank(x_l.value(), 4, "width_pool input");
  const auto& s = x_l.shape();
  return core::reshape(core::pool_width(x_l, mode), {s[0], s[1], s[2]});
}

Var coarsen(const Var& z, std::size_t coarse_height) {
  core::require_rank(z.value(), 3, "coarsen input");
  if (coarse_height == 0) throw ConfigError("coarse height must be at least 1");
  if (coarse_height > z.dim(2)) {
    throw ConfigError("coarse height " + std::to_string(coarse_height) + " exceeds feature height " +
                      std::to_string(z.dim(2)));
  }
  return core::resample_height(z, coarse_height);
}

namespace {

Var add_positions(const Var& q, const HANetParams& params, const HANetConfig& config,
                  const std::vector<std::vector<std::size_t>>& positions) {
  if (!params.pe_table) return q;
  if (params.pe_table->rows() != q.dim(2) || params.pe_table->channels() != q.dim(1)) {
    throw ConfigError("positional table " + core::to_string(params.pe_table->values.shape()) +
                      " does not fit the layer-" + std::to_string(config.pe_layer) + " input " +
                      core::to_string(q.shape()));
  }
  return posenc::inject(q, *params.pe_table, positions);
}

}  // namespace

Var attention_from_context(const Var& z_hat, HANetParams& params, const HANetConfig& config, Mode mode,
                           core::Rng& rng) {
  core::require_rank(z_hat.value(), 3, "attention_from_context input");
  if (z_hat.dim(1) != config.in_channels) {
    throw ShapeError("HANet expects " + std::to_string(config.in_channels) + " context channels, got " +
                     std::to_string(z_hat.dim(1)));
  }
  const std::size_t n = z_hat.dim(0);
  const std::size_t h_hat = z_hat.dim(2);

  Var q = core::dropout(z_hat, config.dropout_p, mode, rng);

  std::vector<std::vector<std::size_t>> positions;
  if (config.pe_mode != PeMode::None) {
    if (mode == Mode::Train && config.jitter_max > 0) {
      for (std::size_t b = 0; b < n; ++b) positions.push_back(posenc::jitter(h_hat, config.jitter_max, rng));
    } else {
      positions.push_back(posenc::identity_positions(h_hat));
    }
  }

  if (config.pe_layer == 1) q = add_positions(q, params, config, positions);
  q = core::relu(core::apply(params.norm1, core::apply(params.conv1, q), mode));
  if (config.pe_layer == 2) q = add_positions(q, params, config, positions);
  q = core::relu(core::apply(params.norm2, core::apply(params.conv2, q), mode));
  if (config.pe_layer == 3) q = add_positions(q, params, config, positions);
  return core::sigmoid(core::apply(params.conv3, q));
}

Var expand_attention(const Var& a_hat, std::size_t height) {
  core::require_rank(a_hat.value(), 3, "expand_attention input");
  if (height < a_hat.dim(2)) {
    throw ShapeError("cannot expand attention of height " + std::to_string(a_hat.dim(2)) + " down to " +
                     std::to_string(height));
  }
  return core::resample_height(a_hat, height);
}

Var apply(const Var& attention, const Var& x_h) { return core::gate_rows(attention, x_h); }

HANetOutput forward(const Var& x_l, const Var& x_h, HANetParams& params, const HANetConfig& config, Mode mode,
                    core::Rng& rng) {
  core::require_rank(x_l.value(), 4, "HANet lower-level map");
  core::require_rank(x_h.value(), 4, "HANet higher-level map");
  if (x_l.dim(0) != x_h.dim(0)) throw ShapeError("HANet: batch sizes of the two maps differ");
  if (x_h.dim(1) != config.out_channels) {
    throw ShapeError("HANet gates " + std::to_string(config.out_channels) + " channels, map has " +
                     std::to_string(x_h.dim(1)));
  }
  Var z = width_pool(x_l, config.pool);
  Var z_hat = coarsen(z, config.coarse_height);
  Var a_hat = attention_from_context(z_hat, params, config, mode, rng);
  Var a = expand_attention(a_hat, x_h.dim(2));
  return {apply(a, x_h), a, a_hat};
}

}  // namespace hanet::attention
