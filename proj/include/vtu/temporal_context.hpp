#pragma once

#include "vtu/layers.hpp"

#include <vector>

namespace vtu {

/// Learned temporal attention over T frame slots.
///
/// Per spatial position i, slot t scores its feature vector with a slot
/// embedding (logit = <w_t, x_{t,i}>); scores are softmaxed across slots,
/// rescaled by each slot's spatial mass, used to pool every slot into one
/// channel vector, and finally mixed into the center frame's map with
/// per-slot gains.
template <typename S>
struct TcmParams {
  Tensor<S> w;          // T x C slot embeddings
  Tensor<S> w_star;     // T, gain on the pooled context vector
  Tensor<S> w_star2;    // T, gain on each slot's contribution

  Index slots() const { return w.dim(0); }
  Index channels() const { return w.dim(1); }

  /// w ~ N(0, 1/C), w_star = 1, w_star2 = 0 (starts as identity on the center frame).
  static TcmParams init(Index slots, Index channels, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<S>& f);
};

template <typename S>
struct TcmOutput {
  Tensor<S> blended;  // C x h x w, center-slot representation
  Tensor<S> attn;     // T x h x w softmax maps
};

/// Softmax across slots of the per-position slot logits. Returns T x h x w.
template <typename S>
Tensor<S> temporal_correlation(const std::vector<Tensor<S>>& features, const TcmParams<S>& params);

/// xhat[t,i] = corr[t,i] * (sum_j corr[t,j]) / (h*w).
template <typename S>
Tensor<S> normalize_correlation(const Tensor<S>& corr);

/// z_i = x_{center,i} + sum_n w_star2[n] * (x_{n,i} + w_star[n] * sum_j xhat[n,j] x_{n,j}).
template <typename S>
Tensor<S> blend(const std::vector<Tensor<S>>& features, const Tensor<S>& xhat, const TcmParams<S>& params,
                Index center);

template <typename S>
TcmOutput<S> tcm_forward(const std::vector<Tensor<S>>& features, const TcmParams<S>& params, Index center);

/// Fits a stack of any length to `slots` frames: longer stacks are truncated
/// around their center, shorter ones are padded by repeating edge frames.
template <typename T>
std::vector<T> adapt_snippet(const std::vector<T>& frames, Index slots) {
  if (frames.empty()) throw std::invalid_argument("adapt_snippet: empty stack");
  const Index n = static_cast<Index>(frames.size());
  const Index center = (n - 1) / 2;
  const Index half = (slots - 1) / 2;
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(slots));
  for (Index k = 0; k < slots; ++k) {
    const Index src = std::clamp<Index>(center - half + k, 0, n - 1);
    out.push_back(frames[static_cast<std::size_t>(src)]);
  }
  return out;
}

extern template struct TcmParams<float>;
extern template struct TcmParams<double>;

}  // namespace vtu
