#pragma once

#include "vtu/ops.hpp"
#include "vtu/random.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <string>

namespace vtu {

template <typename S>
using ParamVisitor = std::function<void(const std::string& name, Tensor<S>& param)>;

/// He-style fan-in initialization: N(0, 2 / fan_in).
template <typename S>
Tensor<S> he_normal(Shape shape, Index fan_in, Rng& rng) {
  return randn<S>(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

/// Largest divisor of `channels` not exceeding `preferred`.
inline Index norm_groups_for(Index channels, Index preferred) {
  return std::gcd(channels, std::max<Index>(preferred, 1));
}

/// k x k convolution (no bias) followed by group normalization.
template <typename S>
struct ConvNorm {
  Tensor<S> kernel;
  Tensor<S> gain;
  Tensor<S> bias;
  Index stride = 1;
  Index groups = 1;

  static ConvNorm init(Index in_c, Index out_c, Index k, Index stride, Index preferred_groups, Rng& rng) {
    ConvNorm c;
    c.kernel = he_normal<S>({out_c, in_c, k, k}, in_c * k * k, rng);
    c.gain = Tensor<S>::ones({out_c});
    c.bias = Tensor<S>::zeros({out_c});
    c.stride = stride;
    c.groups = norm_groups_for(out_c, preferred_groups);
    return c;
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return group_norm(conv2d(x, kernel, stride, kernel.dim(2) / 2), groups, gain, bias);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".kernel", kernel);
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

/// Dense layer on row vectors: x W + b.
template <typename S>
struct Linear {
  Tensor<S> weight;  // in x out
  Tensor<S> bias;    // out

  static Linear init(Index in, Index out, Rng& rng) {
    Linear l;
    l.weight = randn<S>({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    l.bias = Tensor<S>::zeros({out});
    return l;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return add(matmul(x, weight), bias); }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

}  // namespace vtu
