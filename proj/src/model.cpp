#include "vtu/model.hpp"

namespace vtu {

void ModelConfig::validate() const {
  if (height < kEncoderStride || width < kEncoderStride || height % kEncoderStride != 0 ||
      width % kEncoderStride != 0)
    throw std::invalid_argument("model: frame size " + std::to_string(height) + "x" + std::to_string(width) +
                                " must be a positive multiple of 16");
  if (snippet_length < 1 || snippet_length % 2 == 0)
    throw std::invalid_argument("model: snippet length must be odd and >= 1, got " + std::to_string(snippet_length));
  encoder.validate();
  vit.validate();
}

namespace {
enum Stream : std::uint64_t { kEncoderStream = 1, kTcmStream = 2, kVitStream = 3, kDecoderStream = 4 };
}

template <typename S>
ModelParams<S> ModelParams<S>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  Rng enc_rng(mix_seed(seed, kEncoderStream));
  p.encoder = EncoderParams<S>::init(cfg.encoder, enc_rng);
  if (cfg.uses_temporal_context()) {
    Rng tcm_rng(mix_seed(seed, kTcmStream));
    p.tcm = TcmParams<S>::init(cfg.snippet_length, cfg.encoder.deep_channels(), tcm_rng);
  }
  Rng vit_rng(mix_seed(seed, kVitStream));
  p.vit = VitParams<S>::init(cfg.vit, cfg.encoder.deep_channels(), cfg.num_patches(), vit_rng);
  Rng dec_rng(mix_seed(seed, kDecoderStream));
  DecoderConfig dec = cfg.decoder;
  dec.norm_groups = cfg.encoder.norm_groups;
  p.decoder = DecoderParams<S>::init(dec, cfg.encoder, cfg.vit.hidden_dim, dec_rng);
  return p;
}

template <typename S>
void ModelParams<S>::visit(const ParamVisitor<S>& f) {
  encoder.visit("encoder", f);
  if (tcm) tcm->visit("tcm", f);
  vit.visit("vit", f);
  decoder.visit("decoder", f);
}

template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> ModelParams<S>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  visit([&](const std::string& name, Tensor<S>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename S>
Index ModelParams<S>::parameter_count() {
  Index n = 0;
  visit([&](const std::string&, Tensor<S>& t) { n += t.size(); });
  return n;
}

template <typename S>
ModelOutput<S> model_forward_full(const std::vector<Tensor<S>>& frames, const ModelParams<S>& params,
                                  const ModelConfig& cfg) {
  if (frames.empty()) throw std::invalid_argument("model_forward: empty frame stack");
  std::vector<Tensor<S>> fitted = adapt_snippet(frames, cfg.snippet_length);
  for (auto& f : fitted) {
    if (f.rank() == 2) f = reshape(f, {1, f.dim(0), f.dim(1)});
    if (f.rank() != 3 || f.dim(1) != cfg.height || f.dim(2) != cfg.width)
      throw ShapeError("model_forward: frame " + shape_str(f.shape()) + " does not match configured size " +
                       std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  const Index center = (cfg.snippet_length - 1) / 2;
  auto encoded = encode_stack(fitted, params.encoder, center);

  ModelOutput<S> out;
  Tensor<S> bottleneck = encoded[static_cast<std::size_t>(center)].deep;
  if (cfg.uses_temporal_context()) {
    if (!params.tcm) throw std::invalid_argument("model_forward: multi-frame config without temporal parameters");
    std::vector<Tensor<S>> deep;
    deep.reserve(encoded.size());
    for (const auto& e : encoded) deep.push_back(e.deep);
    TcmOutput<S> tcm = tcm_forward(deep, *params.tcm, center);
    bottleneck = tcm.blended;
    out.attn = tcm.attn;
  }
  const Tensor<S> tokens = vit_forward(bottleneck, params.vit);
  out.masks = decode(tokens, encoded[static_cast<std::size_t>(center)].skips, params.decoder);
  return out;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelOutput<float> model_forward_full(const std::vector<Tensor<float>>&, const ModelParams<float>&,
                                               const ModelConfig&);
template ModelOutput<double> model_forward_full(const std::vector<Tensor<double>>&, const ModelParams<double>&,
                                                const ModelConfig&);

}  // namespace vtu
