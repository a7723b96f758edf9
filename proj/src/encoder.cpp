#include "vtu/encoder.hpp"

namespace vtu {

void EncoderConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("encoder: in_channels must be positive");
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_channels[s] < 1) throw std::invalid_argument("encoder: stage channels must be positive");
    if (blocks_per_stage[s] < 1) throw std::invalid_argument("encoder: each stage needs at least one block");
  }
  if (norm_groups < 1) throw std::invalid_argument("encoder: norm_groups must be positive");
}

template <typename S>
void ResidualBlock<S>::visit(const std::string& prefix, const ParamVisitor<S>& f) {
  conv1.visit(prefix + ".conv1", f);
  conv2.visit(prefix + ".conv2", f);
  if (projection) projection->visit(prefix + ".proj", f);
}

template <typename S>
EncoderParams<S> EncoderParams<S>::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  Index in_c = cfg.in_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<ResidualBlock<S>> blocks;
    const Index out_c = cfg.stage_channels[s];
    for (Index b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const Index stride = b == 0 ? 2 : 1;
      ResidualBlock<S> blk;
      blk.conv1 = ConvNorm<S>::init(in_c, out_c, 3, stride, cfg.norm_groups, rng);
      blk.conv2 = ConvNorm<S>::init(out_c, out_c, 3, 1, cfg.norm_groups, rng);
      if (stride != 1 || in_c != out_c) blk.projection = ConvNorm<S>::init(in_c, out_c, 1, stride, cfg.norm_groups, rng);
      blocks.push_back(std::move(blk));
      in_c = out_c;
    }
    p.stages.push_back(std::move(blocks));
  }
  return p;
}

template <typename S>
void EncoderParams<S>::visit(const std::string& prefix, const ParamVisitor<S>& f) {
  for (std::size_t s = 0; s < stages.size(); ++s)
    for (std::size_t b = 0; b < stages[s].size(); ++b)
      stages[s][b].visit(prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b), f);
}

namespace {

template <typename S>
Tensor<S> residual_forward(const ResidualBlock<S>& blk, const Tensor<S>& x) {
  Tensor<S> h = relu(blk.conv1(x));
  h = blk.conv2(h);
  Tensor<S> shortcut = blk.projection ? (*blk.projection)(x) : x;
  return relu(add(h, shortcut));
}

}  // namespace

template <typename S>
EncoderOutput<S> encode_frame(const Tensor<S>& frame, const EncoderParams<S>& params) {
  if (frame.rank() != 3) throw ShapeError("encode_frame: expected C x H x W frame, got " + shape_str(frame.shape()));
  if (frame.dim(1) % kEncoderStride != 0 || frame.dim(2) % kEncoderStride != 0)
    throw ShapeError("encode_frame: spatial extent " + shape_str(frame.shape()) + " is not divisible by 16");
  if (params.stages.size() != 4) throw std::invalid_argument("encode_frame: encoder must have four stages");
  EncoderOutput<S> out;
  Tensor<S> x = frame;
  for (std::size_t s = 0; s < 4; ++s) {
    for (const auto& blk : params.stages[s]) x = residual_forward(blk, x);
    if (s < 3) out.skips[s] = x;
  }
  out.deep = x;
  return out;
}

template <typename S>
std::vector<EncoderOutput<S>> encode_stack(const std::vector<Tensor<S>>& frames, const EncoderParams<S>& params,
                                           Index center) {
  if (frames.empty()) throw std::invalid_argument("encode_stack: empty stack");
  if (center < 0 || center >= static_cast<Index>(frames.size()))
    throw std::out_of_range("encode_stack: center index out of range");
  std::vector<EncoderOutput<S>> outs;
  outs.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape() != frames.front().shape())
      throw ShapeError("encode_stack: frame " + std::to_string(t) + " has shape " + shape_str(frames[t].shape()) +
                       ", expected " + shape_str(frames.front().shape()));
    EncoderOutput<S> e = encode_frame(frames[t], params);
    if (static_cast<Index>(t) != center) e.skips = {};
    outs.push_back(std::move(e));
  }
  return outs;
}

template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template struct EncoderParams<float>;
template struct EncoderParams<double>;
template EncoderOutput<float> encode_frame(const Tensor<float>&, const EncoderParams<float>&);
template EncoderOutput<double> encode_frame(const Tensor<double>&, const EncoderParams<double>&);
template std::vector<EncoderOutput<float>> encode_stack(const std::vector<Tensor<float>>&,
                                                        const EncoderParams<float>&, Index);
template std::vector<EncoderOutput<double>> encode_stack(const std::vector<Tensor<double>>&,
                                                         const EncoderParams<double>&, Index);

}  // namespace vtu
