#pragma once

#include "vtu/layers.hpp"

#include <array>
#include <optional>
#include <vector>

namespace vtu {

/// Four-stage residual CNN; every stage halves the spatial extent.
struct EncoderConfig {
  Index in_channels = 1;
  std::array<Index, 4> stage_channels{16, 32, 64, 128};
  std::array<Index, 4> blocks_per_stage{2, 2, 2, 2};
  Index norm_groups = 8;

  void validate() const;
  Index deep_channels() const { return stage_channels[3]; }
};

inline constexpr Index kEncoderStride = 16;

template <typename S>
struct ResidualBlock {
  ConvNorm<S> conv1;
  ConvNorm<S> conv2;
  std::optional<ConvNorm<S>> projection;  // 1x1 shortcut on stride or channel change

  void visit(const std::string& prefix, const ParamVisitor<S>& f);
};

template <typename S>
struct EncoderParams {
  std::vector<std::vector<ResidualBlock<S>>> stages;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<S>& f);
};

template <typename S>
struct EncoderOutput {
  Tensor<S> deep;                  // C4 x H/16 x W/16
  std::array<Tensor<S>, 3> skips;  // H/2, H/4, H/8
};

/// Encodes one 1 x H x W frame (H, W divisible by 16).
template <typename S>
EncoderOutput<S> encode_frame(const Tensor<S>& frame, const EncoderParams<S>& params);

/// Applies the shared encoder to every frame. Skip maps are kept only for
/// `center`; other entries carry their deep map alone.
template <typename S>
std::vector<EncoderOutput<S>> encode_stack(const std::vector<Tensor<S>>& frames, const EncoderParams<S>& params,
                                           Index center);

extern template struct EncoderParams<float>;
extern template struct EncoderParams<double>;

}  // namespace vtu
