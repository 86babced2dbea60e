#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hanet::core {

/// Seeded generator that can be split into independent child streams.
///
/// A child's seed is derived from the parent's seed and a label only, so
/// adding a new consumer never shifts the draws seen by existing ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }
  Rng child(std::string_view label) const;
  Rng child(std::uint64_t index) const;

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  // Inclusive on both ends.
  long uniform_int(long lo, long hi);
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  static std::uint64_t mix(std::uint64_t x);

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace hanet::core
