#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "viewflow/tensor.hpp"

namespace viewflow {

/// SplitMix64 generator. 64 bits of state; `split` derives independent
/// child streams keyed by a label so each parameter gets its own stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do x = next();
    while (x >= limit);
    return x % n;
  }

  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Rng split(std::string_view label) const { return Rng(mix(state_ ^ hash(label))); }
  Rng split(std::uint64_t key) const { return Rng(mix(state_ + mix(key + 0x632BE59BD9B4E019ULL))); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

  static std::uint64_t hash(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : s) h = (h ^ c) * 0x100000001B3ULL;
    return mix(h);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

/// Glorot-uniform init: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
/// Rank-1 tensors are biases-like and use fan_in = fan_out = dim.
template <typename Scalar>
Tensor<Scalar> glorot_uniform(const Shape& shape, Rng rng) {
  std::size_t fan_in = shape[0], fan_out = shape[0];
  if (shape.size() >= 2) {
    const std::size_t receptive = shape_size(shape) / (shape[0] * shape[1]);
    fan_out = shape[0] * receptive;
    fan_in = shape[1] * receptive;
  }
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  Tensor<Scalar> t(shape);
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-a, a));
  return t;
}

template <typename Scalar>
Tensor<Scalar> uniform_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(shape);
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

}  // namespace viewflow
