#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "priq/tensor.hpp"

namespace priq {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t child) {
  return mix_seed(mix_seed(parent) ^ (child * 0xD6E8FEB86659FD93ULL + 1));
}

// He-normal initialization: N(0, 2 / fan_in).
template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape), true);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.mutable_values()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace priq
