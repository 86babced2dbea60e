#include "hanet/core/rng.hpp"

namespace hanet::core {

std::uint64_t Rng::mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::child(std::string_view label) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng(mix(seed_ ^ mix(h)));
}

Rng Rng::child(std::uint64_t index) const { return Rng(mix(seed_ + mix(index + 0x5bd1e995ULL))); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

long Rng::uniform_int(long lo, long hi) {
  std::uniform_int_distribution<long> dist(lo, hi);
  return dist(engine_);
}

}  // namespace hanet::core
