#include "hanet/posenc.hpp"

#include <algorithm>
#include <cmath>

#include "hanet/core/errors.hpp"

namespace hanet::posenc {

using core::Tensor;
using core::Var;

PeMode parse_pe_mode(const std::string& text) {
  if (text == "none") return PeMode::None;
  if (text == "sinusoidal") return PeMode::Sinusoidal;
  if (text == "learnable") return PeMode::Learnable;
  throw ConfigError("unknown positional encoding mode '" + text + "' (none|sinusoidal|learnable)");
}

std::string to_string(PeMode mode) {
  switch (mode) {
    case PeMode::None: return "none";
    case PeMode::Sinusoidal: return "sinusoidal";
    case PeMode::Learnable: return "learnable";
  }
  return "none";
}

Tensor sinusoidal_values(std::size_t h_hat, std::size_t channels) {
  if (channels < 2) throw ConfigError("sinusoidal encoding needs at least 2 channels");
  if (h_hat == 0) throw ConfigError("sinusoidal encoding needs at least 1 row");
  Tensor table(core::Shape{h_hat, channels});
  const double c = static_cast<double>(channels);
  for (std::size_t p = 0; p < h_hat; ++p) {
    for (std::size_t i = 0; 2 * i < channels; ++i) {
      const double angle = static_cast<double>(p) / std::pow(100.0, 2.0 * static_cast<double>(i) / c);
      table[p * channels + 2 * i] = std::sin(angle);
      if (2 * i + 1 < channels) table[p * channels + 2 * i + 1] = std::cos(angle);
    }
  }
  return table;
}

PeTable sinusoidal_table(std::size_t h_hat, std::size_t channels) {
  return PeTable{core::constant(sinusoidal_values(h_hat, channels)), PeMode::Sinusoidal};
}

PeTable learnable_table(std::size_t h_hat, std::size_t channels, core::Rng& rng) {
  if (h_hat == 0 || channels == 0) throw ConfigError("learnable embedding needs nonzero extents");
  Tensor table(core::Shape{h_hat, channels});
  for (auto& v : table.storage()) v = rng.normal(0.0, 0.02);
  return PeTable{core::leaf(std::move(table)), PeMode::Learnable};
}

std::vector<std::size_t> identity_positions(std::size_t h_hat) {
  std::vector<std::size_t> idx(h_hat);
  for (std::size_t p = 0; p < h_hat; ++p) idx[p] = p;
  return idx;
}

std::vector<std::size_t> jitter(std::size_t h_hat, std::size_t jitter_max, core::Rng& rng) {
  std::vector<std::size_t> idx(h_hat);
  const long last = static_cast<long>(h_hat) - 1;
  const long span = static_cast<long>(jitter_max);
  for (std::size_t p = 0; p < h_hat; ++p) {
    const long shift = span ? rng.uniform_int(-span, span) : 0;
    idx[p] = static_cast<std::size_t>(std::clamp(static_cast<long>(p) + shift, 0L, last));
  }
  return idx;
}

Var inject(const Var& q, const PeTable& table, const std::vector<std::vector<std::size_t>>& positions) {
  const auto rank = q.value().rank();
  if (rank != 2 && rank != 3) throw ShapeError("inject expects C x H or N x C x H, got " + core::to_string(q.shape()));
  const std::size_t n = rank == 3 ? q.dim(0) : 1;
  const std::size_t c = q.dim(rank - 2);
  const std::size_t h = q.dim(rank - 1);
  if (table.values.value().rank() != 2 || table.channels() != c) {
    throw ConfigError("positional table has " + std::to_string(table.values.value().rank() == 2 ? table.channels() : 0) +
                      " channels, feature has " + std::to_string(c));
  }
  if (positions.size() != 1 && positions.size() != n) {
    throw ShapeError("inject: need one shared position vector or one per sample");
  }
  for (const auto& idx : positions) {
    if (idx.size() != h) throw ShapeError("inject: position vector length does not match height");
    for (auto p : idx) {
      if (p >= table.rows()) throw ShapeError("inject: position index outside the table");
    }
  }

  const Tensor& tv = table.values.value();
  Tensor out = q.value();
  for (std::size_t b = 0; b < n; ++b) {
    const auto& idx = positions.size() == 1 ? positions[0] : positions[b];
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h; ++p) out[(b * c + ch) * h + p] += tv[idx[p] * c + ch];
  }

  return core::make_result(std::move(out), {q, table.values}, [positions, n, c, h](core::Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& gq = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < gq.size(); ++i) gq[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& gt = self.parents[1]->grad_buffer();
      for (std::size_t b = 0; b < n; ++b) {
        const auto& idx = positions.size() == 1 ? positions[0] : positions[b];
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < h; ++p) gt[idx[p] * c + ch] += self.grad[(b * c + ch) * h + p];
      }
    }
  });
}

}  // namespace hanet::posenc
