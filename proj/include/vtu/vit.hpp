#pragma once

#include "vtu/layers.hpp"

#include <vector>

namespace vtu {

struct VitConfig {
  Index patch_size = 16;  // on the input image; one cell of the 1/16 feature grid
  Index hidden_dim = 64;
  Index num_layers = 4;
  Index num_heads = 4;
  Index mlp_dim = 128;

  void validate() const;
};

template <typename S>
struct VitLayer {
  Tensor<S> ln1_gain, ln1_bias;
  Linear<S> query, key, value, out_proj;
  Tensor<S> ln2_gain, ln2_bias;
  Linear<S> mlp_in, mlp_out;

  void visit(const std::string& prefix, const ParamVisitor<S>& f);
};

template <typename S>
struct VitParams {
  Tensor<S> patch_proj;  // C x D
  Tensor<S> pos_embed;   // N x D, zero-initialized
  std::vector<VitLayer<S>> layers;
  Index num_heads = 1;

  static VitParams init(const VitConfig& cfg, Index in_channels, Index num_patches, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<S>& f);
};

/// Tokens from a C x h x w map: one token per grid cell (row-major), projected
/// and offset by the positional embedding. Returns N x D.
template <typename S>
Tensor<S> patch_embed(const Tensor<S>& feature, const VitParams<S>& params);

/// Pre-norm multi-head self-attention with residual: x + MSA(LN(x)).
/// When `attn_out` is given it receives one N x N weight matrix per head.
template <typename S>
Tensor<S> msa(const Tensor<S>& x, const VitLayer<S>& layer, Index num_heads,
              std::vector<Tensor<S>>* attn_out = nullptr);

/// z* = x + MSA(LN(x)); z = z* + MLP(LN(z*)).
template <typename S>
Tensor<S> transformer_block(const Tensor<S>& x, const VitLayer<S>& layer, Index num_heads);

template <typename S>
Tensor<S> vit_forward(const Tensor<S>& feature, const VitParams<S>& params);

extern template struct VitParams<float>;
extern template struct VitParams<double>;

}  // namespace vtu
