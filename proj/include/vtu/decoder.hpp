#pragma once

#include "vtu/encoder.hpp"

#include <array>
#include <string>

namespace vtu {

enum class FinalUpsample { Bilinear, Transposed };

FinalUpsample parse_final_upsample(const std::string& name);
std::string to_string(FinalUpsample mode);

struct DecoderConfig {
  Index final_channels = 16;
  FinalUpsample final_upsample = FinalUpsample::Bilinear;
  Index norm_groups = 8;
};

/// Per-instance probability maps, each H x W.
template <typename S>
struct MaskPair {
  Tensor<S> bolus;
  Tensor<S> pharynx;
};

template <typename S>
struct UpStage {
  ConvNorm<S> conv1;  // (previous + skip channels) -> out
  ConvNorm<S> conv2;
};

template <typename S>
struct SegmentationHead {
  Tensor<S> kernel;  // 1 x C x 1 x 1
  Tensor<S> bias;    // 1
};

template <typename S>
struct DecoderParams {
  ConvNorm<S> reproject;            // 1x1, D -> C4
  std::array<UpStage<S>, 3> stages;  // to 1/8, 1/4, 1/2 with skip fusion
  Tensor<S> final_kernel;           // Cf x C1 x 3 x 3 (bilinear) or C1 x Cf x 2 x 2 (transposed)
  Tensor<S> final_gain, final_bias;
  Index final_groups = 1;
  FinalUpsample final_upsample = FinalUpsample::Bilinear;
  SegmentationHead<S> bolus_head, pharynx_head;

  static DecoderParams init(const DecoderConfig& cfg, const EncoderConfig& enc, Index hidden_dim, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<S>& f);
};

/// Maps transformer tokens (N x D over an h x w grid) plus the center frame's
/// skip maps to bolus and pharynx probabilities at full resolution.
template <typename S>
MaskPair<S> decode(const Tensor<S>& tokens, const std::array<Tensor<S>, 3>& skips, const DecoderParams<S>& params);

extern template struct DecoderParams<float>;
extern template struct DecoderParams<double>;

}  // namespace vtu
