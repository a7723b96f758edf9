#pragma once

#include "vtu/tensor.hpp"

#include <vector>

// Differentiable tensor operations. Each function records a backward rule on
// the active tape when at least one operand requires a gradient.
namespace vtu {

/// Result shape of broadcasting `a` against `b` (trailing-dimension alignment).
Shape broadcast_shape(const Shape& a, const Shape& b);

// Elementwise arithmetic with broadcasting.
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S factor);
template <typename S> Tensor<S> add_scalar(const Tensor<S>& a, S value);

template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

/// Cross-correlation of a C_in x H x W map with a C_out x C_in x k x k kernel.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, Index stride = 1, Index padding = 0);

/// Adjoint of conv2d. The kernel is laid out C_in x C_out x k x k, where C_in
/// matches the input channels; output extent is (H-1)*stride + k - 2*padding.
template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& input, const Tensor<S>& kernel, Index stride = 1,
                           Index padding = 0);

template <typename S> Tensor<S> softmax(const Tensor<S>& x, Index axis);

/// Normalizes over the last axis, then applies per-feature gain and bias.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps = S(1e-5));

/// Group normalization of a C x H x W map with per-channel gain and bias.
template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, Index groups, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5));

template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> gelu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> exp(const Tensor<S>& x);
template <typename S> Tensor<S> log(const Tensor<S>& x);
template <typename S> Tensor<S> square(const Tensor<S>& x);
/// Gradient passes only where lo < x < hi.
template <typename S> Tensor<S> clamp(const Tensor<S>& x, S lo, S hi);

/// Bilinear resize of a C x H x W map by an integer factor (half-pixel centers).
template <typename S> Tensor<S> upsample_bilinear(const Tensor<S>& x, Index factor);
template <typename S> Tensor<S> max_pool2d(const Tensor<S>& x, Index window);
template <typename S> Tensor<S> avg_pool2d(const Tensor<S>& x, Index window);

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
/// Transpose of a rank-2 tensor.
template <typename S> Tensor<S> transpose(const Tensor<S>& x);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis);
/// Stacks equal-shape tensors along a new leading axis.
template <typename S> Tensor<S> stack(const std::vector<Tensor<S>>& parts);
template <typename S> Tensor<S> slice(const Tensor<S>& x, Index axis, Index start, Index length);

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> sum(const Tensor<S>& x, Index axis, bool keepdim = false);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x, Index axis, bool keepdim = false);

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, S s) { return scale(a, s); }
template <typename S> Tensor<S> operator*(S s, const Tensor<S>& a) { return scale(a, s); }
template <typename S> Tensor<S> operator+(const Tensor<S>& a, S s) { return add_scalar(a, s); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a) { return scale(a, S(-1)); }

}  // namespace vtu
