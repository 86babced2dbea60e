#pragma once

// Brute-force reference computations for the scene statistics. Written
// independently of src/stats: plain loops over pixels, floating-point band
// tests, no shared helpers.

#include <cmath>
#include <cstdint>
#include <vector>

#include "hanet/stats/scenestats.hpp"

namespace hanet::oracle {

inline std::vector<std::uint64_t> histogram(const std::vector<stats::LabelMap>& maps, std::size_t k) {
  std::vector<std::uint64_t> counts(k, 0);
  for (const auto& m : maps)
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x) {
        const int id = m.ids[y * m.width + x];
        if (id != 255) counts[static_cast<std::size_t>(id)] += 1;
      }
  return counts;
}

// Band b holds row y when begin*H <= y + 0.5 < end*H (last band closed).
inline std::vector<std::vector<std::uint64_t>> band_counts(const std::vector<stats::LabelMap>& maps, std::size_t k,
                                                           const std::vector<stats::Band>& bands) {
  std::vector<std::vector<std::uint64_t>> out(bands.size(), std::vector<std::uint64_t>(k, 0));
  for (const auto& m : maps)
    for (std::size_t y = 0; y < m.height; ++y) {
      const double centre = static_cast<double>(y) + 0.5;
      const double h = static_cast<double>(m.height);
      std::size_t band = bands.size() - 1;
      for (std::size_t b = 0; b < bands.size(); ++b) {
        if (centre >= bands[b].begin * h && centre < bands[b].end * h) {
          band = b;
          break;
        }
      }
      for (std::size_t x = 0; x < m.width; ++x) {
        const int id = m.ids[y * m.width + x];
        if (id != 255) out[band][static_cast<std::size_t>(id)] += 1;
      }
    }
  return out;
}

inline double entropy_nats(const std::vector<std::uint64_t>& counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h += -p * std::log(p);
  }
  return h;
}

// bins x classes counts; bin of coordinate i along n is floor((i + 0.5) * bins / n).
inline std::vector<std::uint64_t> axis_counts(const std::vector<stats::LabelMap>& maps, std::size_t k, bool height,
                                              std::size_t bins) {
  std::vector<std::uint64_t> out(bins * k, 0);
  for (const auto& m : maps)
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x) {
        const int id = m.ids[y * m.width + x];
        if (id == 255) continue;
        const double coord = height ? static_cast<double>(y) : static_cast<double>(x);
        const double len = height ? static_cast<double>(m.height) : static_cast<double>(m.width);
        auto b = static_cast<std::size_t>(std::floor((coord + 0.5) * static_cast<double>(bins) / len));
        if (b >= bins) b = bins - 1;
        out[b * k + static_cast<std::size_t>(id)] += 1;
      }
  return out;
}

}  // namespace hanet::oracle
