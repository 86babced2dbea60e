#pragma once

#include <string>
#include <vector>

#include "hanet/core/autograd.hpp"
#include "hanet/core/rng.hpp"

namespace hanet::posenc {

enum class PeMode { None, Sinusoidal, Learnable };

PeMode parse_pe_mode(const std::string& text);
std::string to_string(PeMode mode);

/// Per-row position table of shape H_hat x C.
struct PeTable {
  core::Var values;
  PeMode mode = PeMode::Sinusoidal;

  std::size_t rows() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
};

// Row p, column 2i: sin(p / 100^(2i/C)); column 2i+1: cos(p / 100^(2i/C)).
// The base is 100, not the 10000 common in language models.
core::Tensor sinusoidal_values(std::size_t h_hat, std::size_t channels);

PeTable sinusoidal_table(std::size_t h_hat, std::size_t channels);
// Trainable table initialised from N(0, 0.02^2).
PeTable learnable_table(std::size_t h_hat, std::size_t channels, core::Rng& rng);

std::vector<std::size_t> identity_positions(std::size_t h_hat);

// index[p] = clamp(p + u, 0, h_hat - 1), u uniform on {-jitter_max..jitter_max},
// drawn independently per row.
std::vector<std::size_t> jitter(std::size_t h_hat, std::size_t jitter_max, core::Rng& rng);

// q: C x H_hat or N x C x H_hat. out[n, :, p] = q[n, :, p] + table[index_n[p], :].
// `positions` holds either one index vector shared by all samples or one per
// sample.
core::Var inject(const core::Var& q, const PeTable& table, const std::vector<std::vector<std::size_t>>& positions);

}  // namespace hanet::posenc
