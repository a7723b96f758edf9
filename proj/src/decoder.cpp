#include "vtu/decoder.hpp"

namespace vtu {

FinalUpsample parse_final_upsample(const std::string& name) {
  if (name == "bilinear") return FinalUpsample::Bilinear;
  if (name == "transposed") return FinalUpsample::Transposed;
  throw std::invalid_argument("unknown final upsample mode '" + name + "' (expected bilinear|transposed)");
}

std::string to_string(FinalUpsample mode) {
  return mode == FinalUpsample::Bilinear ? "bilinear" : "transposed";
}

template <typename S>
DecoderParams<S> DecoderParams<S>::init(const DecoderConfig& cfg, const EncoderConfig& enc, Index hidden_dim,
                                        Rng& rng) {
  if (cfg.final_channels < 1) throw std::invalid_argument("decoder: final_channels must be positive");
  DecoderParams p;
  const auto& ch = enc.stage_channels;
  p.reproject = ConvNorm<S>::init(hidden_dim, ch[3], 1, 1, cfg.norm_groups, rng);
  Index in_c = ch[3];
  for (std::size_t s = 0; s < 3; ++s) {
    const Index skip_c = ch[2 - s];
    const Index out_c = ch[2 - s];
    p.stages[s].conv1 = ConvNorm<S>::init(in_c + skip_c, out_c, 3, 1, cfg.norm_groups, rng);
    p.stages[s].conv2 = ConvNorm<S>::init(out_c, out_c, 3, 1, cfg.norm_groups, rng);
    in_c = out_c;
  }
  const Index cf = cfg.final_channels;
  p.final_upsample = cfg.final_upsample;
  if (cfg.final_upsample == FinalUpsample::Bilinear)
    p.final_kernel = he_normal<S>({cf, in_c, 3, 3}, in_c * 9, rng);
  else
    p.final_kernel = he_normal<S>({in_c, cf, 2, 2}, in_c, rng);
  p.final_gain = Tensor<S>::ones({cf});
  p.final_bias = Tensor<S>::zeros({cf});
  p.final_groups = norm_groups_for(cf, cfg.norm_groups);
  for (auto* head : {&p.bolus_head, &p.pharynx_head}) {
    head->kernel = he_normal<S>({1, cf, 1, 1}, cf, rng);
    head->bias = Tensor<S>::zeros({1});
  }
  return p;
}

template <typename S>
void DecoderParams<S>::visit(const std::string& prefix, const ParamVisitor<S>& f) {
  reproject.visit(prefix + ".reproject", f);
  for (std::size_t s = 0; s < 3; ++s) {
    stages[s].conv1.visit(prefix + ".up" + std::to_string(s) + ".conv1", f);
    stages[s].conv2.visit(prefix + ".up" + std::to_string(s) + ".conv2", f);
  }
  f(prefix + ".final.kernel", final_kernel);
  f(prefix + ".final.gain", final_gain);
  f(prefix + ".final.bias", final_bias);
  f(prefix + ".head_bolus.kernel", bolus_head.kernel);
  f(prefix + ".head_bolus.bias", bolus_head.bias);
  f(prefix + ".head_pharynx.kernel", pharynx_head.kernel);
  f(prefix + ".head_pharynx.bias", pharynx_head.bias);
}

namespace {

template <typename S>
Tensor<S> apply_head(const Tensor<S>& x, const SegmentationHead<S>& head) {
  const Tensor<S> logits = add(conv2d(x, head.kernel), reshape(head.bias, {1, 1, 1}));
  return reshape(sigmoid(logits), {x.dim(1), x.dim(2)});
}

}  // namespace

template <typename S>
MaskPair<S> decode(const Tensor<S>& tokens, const std::array<Tensor<S>, 3>& skips, const DecoderParams<S>& params) {
  if (tokens.rank() != 2) throw ShapeError("decode: expected N x D tokens, got " + shape_str(tokens.shape()));
  for (const auto& s : skips)
    if (s.rank() != 3) throw ShapeError("decode: skip maps must be C x H x W, got " + shape_str(s.shape()));
  const Index h = skips[2].dim(1) / 2;
  const Index w = skips[2].dim(2) / 2;
  if (h * w != tokens.dim(0) || skips[2].dim(1) != 2 * h || skips[2].dim(2) != 2 * w)
    throw ShapeError("decode: " + std::to_string(tokens.dim(0)) + " tokens do not match 1/8 skip " +
                     shape_str(skips[2].shape()));
  for (std::size_t s = 0; s < 2; ++s)
    if (skips[s].dim(1) != 2 * skips[s + 1].dim(1) || skips[s].dim(2) != 2 * skips[s + 1].dim(2))
      throw ShapeError("decode: skip " + shape_str(skips[s].shape()) + " is not twice " +
                       shape_str(skips[s + 1].shape()));

  Tensor<S> x = reshape(transpose(tokens), {tokens.dim(1), h, w});
  x = relu(params.reproject(x));
  for (std::size_t s = 0; s < 3; ++s) {
    const Tensor<S>& skip = skips[2 - s];
    x = concat(std::vector<Tensor<S>>{upsample_bilinear(x, 2), skip}, 0);
    x = relu(params.stages[s].conv1(x));
    x = relu(params.stages[s].conv2(x));
  }
  if (params.final_upsample == FinalUpsample::Bilinear)
    x = conv2d(upsample_bilinear(x, 2), params.final_kernel, 1, 1);
  else
    x = conv_transpose2d(x, params.final_kernel, 2);
  x = relu(group_norm(x, params.final_groups, params.final_gain, params.final_bias));
  return {apply_head(x, params.bolus_head), apply_head(x, params.pharynx_head)};
}

template struct DecoderParams<float>;
template struct DecoderParams<double>;
template MaskPair<float> decode(const Tensor<float>&, const std::array<Tensor<float>, 3>&,
                                const DecoderParams<float>&);
template MaskPair<double> decode(const Tensor<double>&, const std::array<Tensor<double>, 3>&,
                                 const DecoderParams<double>&);

}  // namespace vtu
