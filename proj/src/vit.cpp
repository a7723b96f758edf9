#include "vtu/vit.hpp"

namespace vtu {

void VitConfig::validate() const {
  if (hidden_dim < 1 || num_heads < 1 || mlp_dim < 1 || num_layers < 0)
    throw std::invalid_argument("vit: dimensions must be positive");
  if (hidden_dim % num_heads != 0)
    throw std::invalid_argument("vit: hidden_dim " + std::to_string(hidden_dim) + " not divisible by " +
                                std::to_string(num_heads) + " heads");
  if (patch_size != 16) throw std::invalid_argument("vit: only patch_size 16 (one feature-grid cell) is supported");
}

template <typename S>
void VitLayer<S>::visit(const std::string& prefix, const ParamVisitor<S>& f) {
  f(prefix + ".ln1.gain", ln1_gain);
  f(prefix + ".ln1.bias", ln1_bias);
  query.visit(prefix + ".query", f);
  key.visit(prefix + ".key", f);
  value.visit(prefix + ".value", f);
  out_proj.visit(prefix + ".out_proj", f);
  f(prefix + ".ln2.gain", ln2_gain);
  f(prefix + ".ln2.bias", ln2_bias);
  mlp_in.visit(prefix + ".mlp_in", f);
  mlp_out.visit(prefix + ".mlp_out", f);
}

template <typename S>
VitParams<S> VitParams<S>::init(const VitConfig& cfg, Index in_channels, Index num_patches, Rng& rng) {
  cfg.validate();
  VitParams p;
  const Index d = cfg.hidden_dim;
  p.patch_proj = randn<S>({in_channels, d}, rng, 1.0 / std::sqrt(static_cast<double>(in_channels)));
  p.pos_embed = Tensor<S>::zeros({num_patches, d});
  p.num_heads = cfg.num_heads;
  for (Index l = 0; l < cfg.num_layers; ++l) {
    VitLayer<S> layer;
    layer.ln1_gain = Tensor<S>::ones({d});
    layer.ln1_bias = Tensor<S>::zeros({d});
    layer.query = Linear<S>::init(d, d, rng);
    layer.key = Linear<S>::init(d, d, rng);
    layer.value = Linear<S>::init(d, d, rng);
    layer.out_proj = Linear<S>::init(d, d, rng);
    layer.ln2_gain = Tensor<S>::ones({d});
    layer.ln2_bias = Tensor<S>::zeros({d});
    layer.mlp_in = Linear<S>::init(d, cfg.mlp_dim, rng);
    layer.mlp_out = Linear<S>::init(cfg.mlp_dim, d, rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename S>
void VitParams<S>::visit(const std::string& prefix, const ParamVisitor<S>& f) {
  f(prefix + ".patch_proj", patch_proj);
  f(prefix + ".pos_embed", pos_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(prefix + ".layer" + std::to_string(l), f);
}

template <typename S>
Tensor<S> patch_embed(const Tensor<S>& feature, const VitParams<S>& params) {
  if (feature.rank() != 3) throw ShapeError("patch_embed: expected C x h x w, got " + shape_str(feature.shape()));
  const Index c = feature.dim(0);
  const Index n = feature.dim(1) * feature.dim(2);
  if (params.patch_proj.dim(0) != c)
    throw ShapeError("patch_embed: projection expects " + std::to_string(params.patch_proj.dim(0)) +
                     " channels, feature has " + std::to_string(c));
  if (params.pos_embed.dim(0) != n)
    throw ShapeError("patch_embed: " + std::to_string(n) + " patches but positional table has " +
                     std::to_string(params.pos_embed.dim(0)) + " rows");
  const Tensor<S> tokens = transpose(reshape(feature, {c, n}));  // N x C
  return add(matmul(tokens, params.patch_proj), params.pos_embed);
}

template <typename S>
Tensor<S> msa(const Tensor<S>& x, const VitLayer<S>& layer, Index num_heads, std::vector<Tensor<S>>* attn_out) {
  const Index d = x.dim(1);
  if (num_heads < 1 || d % num_heads != 0)
    throw std::invalid_argument("msa: hidden size " + std::to_string(d) + " not divisible by " +
                                std::to_string(num_heads) + " heads");
  const Index head_dim = d / num_heads;
  const S scale_factor = S(1) / std::sqrt(S(head_dim));
  const Tensor<S> normed = layer_norm(x, layer.ln1_gain, layer.ln1_bias);
  const Tensor<S> q = layer.query(normed);
  const Tensor<S> k = layer.key(normed);
  const Tensor<S> v = layer.value(normed);
  std::vector<Tensor<S>> heads;
  heads.reserve(static_cast<std::size_t>(num_heads));
  if (attn_out) attn_out->clear();
  for (Index h = 0; h < num_heads; ++h) {
    const Tensor<S> qh = slice(q, 1, h * head_dim, head_dim);
    const Tensor<S> kh = slice(k, 1, h * head_dim, head_dim);
    const Tensor<S> vh = slice(v, 1, h * head_dim, head_dim);
    const Tensor<S> weights = softmax(scale(matmul(qh, transpose(kh)), scale_factor), 1);
    if (attn_out) attn_out->push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor<S> merged = num_heads == 1 ? heads.front() : concat(heads, 1);
  return add(x, layer.out_proj(merged));
}

template <typename S>
Tensor<S> transformer_block(const Tensor<S>& x, const VitLayer<S>& layer, Index num_heads) {
  const Tensor<S> z_star = msa(x, layer, num_heads);
  const Tensor<S> hidden = gelu(layer.mlp_in(layer_norm(z_star, layer.ln2_gain, layer.ln2_bias)));
  return add(z_star, layer.mlp_out(hidden));
}

template <typename S>
Tensor<S> vit_forward(const Tensor<S>& feature, const VitParams<S>& params) {
  Tensor<S> z = patch_embed(feature, params);
  for (const auto& layer : params.layers) z = transformer_block(z, layer, params.num_heads);
  return z;
}

template struct VitLayer<float>;
template struct VitLayer<double>;
template struct VitParams<float>;
template struct VitParams<double>;

#define VTU_INSTANTIATE_VIT(S)                                                                           \
  template Tensor<S> patch_embed(const Tensor<S>&, const VitParams<S>&);                                 \
  template Tensor<S> msa(const Tensor<S>&, const VitLayer<S>&, Index, std::vector<Tensor<S>>*);          \
  template Tensor<S> transformer_block(const Tensor<S>&, const VitLayer<S>&, Index);                     \
  template Tensor<S> vit_forward(const Tensor<S>&, const VitParams<S>&);

VTU_INSTANTIATE_VIT(float)
VTU_INSTANTIATE_VIT(double)

#undef VTU_INSTANTIATE_VIT

}  // namespace vtu
