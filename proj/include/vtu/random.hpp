#pragma once

#include "vtu/tensor.hpp"

#include <cstdint>
#include <random>

namespace vtu {

/// Derives an independent stream seed from a base seed and stream labels
/// (splitmix64 finalizer over the combined words).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

template <typename S>
Tensor<S> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<S> t(std::move(shape));
  for (S& v : t.mutable_data()) v = static_cast<S>(rng.normal(0.0, stddev));
  return t;
}

template <typename S>
Tensor<S> rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (S& v : t.mutable_data()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

}  // namespace vtu
