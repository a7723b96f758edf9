#pragma once

#include "vtu/decoder.hpp"
#include "vtu/encoder.hpp"
#include "vtu/temporal_context.hpp"
#include "vtu/vit.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace vtu {

struct ModelConfig {
  Index height = 64;
  Index width = 64;
  Index snippet_length = 5;
  EncoderConfig encoder;
  VitConfig vit;
  DecoderConfig decoder;

  void validate() const;
  Index grid_height() const { return height / kEncoderStride; }
  Index grid_width() const { return width / kEncoderStride; }
  Index num_patches() const { return grid_height() * grid_width(); }
  /// Temporal blending is active only for snippets longer than one frame.
  bool uses_temporal_context() const { return snippet_length > 1; }
};

/// Complete learned parameter set of the segmentation network.
template <typename S>
struct ModelParams {
  EncoderParams<S> encoder;
  std::optional<TcmParams<S>> tcm;  // absent for single-frame models
  VitParams<S> vit;
  DecoderParams<S> decoder;

  /// Each sub-module draws from its own seed stream, so models that differ
  /// only in snippet length share every non-temporal parameter.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  void visit(const ParamVisitor<S>& f);
  std::vector<std::pair<std::string, Tensor<S>>> named_parameters();
  Index parameter_count();

  template <typename O>
  ModelParams<O> cast(const ModelConfig& cfg);
};

template <typename S>
struct ModelOutput {
  MaskPair<S> masks;
  Tensor<S> attn;  // T x h x w temporal attention (empty for single-frame models)
};

/// Full pipeline for one snippet of 1 x H x W (or H x W) frames; the center
/// frame is the segmentation target. Stacks whose length differs from the
/// configured snippet length are first fitted with adapt_snippet().
template <typename S>
ModelOutput<S> model_forward_full(const std::vector<Tensor<S>>& frames, const ModelParams<S>& params,
                                  const ModelConfig& cfg);

template <typename S>
MaskPair<S> model_forward(const std::vector<Tensor<S>>& frames, const ModelParams<S>& params,
                          const ModelConfig& cfg) {
  return model_forward_full(frames, params, cfg).masks;
}

template <typename S>
template <typename O>
ModelParams<O> ModelParams<S>::cast(const ModelConfig& cfg) {
  ModelParams<O> out = ModelParams<O>::init(cfg, 0);
  auto src = named_parameters();
  auto dst = out.named_parameters();
  if (src.size() != dst.size()) throw std::logic_error("ModelParams::cast: parameter layout mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].second.shape() != dst[i].second.shape())
      throw std::logic_error("ModelParams::cast: shape mismatch for " + src[i].first);
    auto d = dst[i].second.mutable_data();
    auto s = src[i].second.data();
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<O>(s[k]);
  }
  return out;
}

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

}  // namespace vtu
