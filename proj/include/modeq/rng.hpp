#pragma once

#include <cstdint>
#include <random>

#include "modeq/tensor.hpp"

namespace modeq {

/// Derives an independent stream seed from a base seed (splitmix64 step).
/// Keeps every random draw in a run traceable to one declared seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
}

inline Tensor normal_tensor(std::vector<int> shape, std::mt19937_64& rng,
                            double stddev = 1.0) {
  Tensor t(std::move(shape));
  fill_normal(t, rng, stddev);
  return t;
}

}  // namespace modeq
