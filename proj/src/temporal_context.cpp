#include "vtu/temporal_context.hpp"

namespace vtu {

template <typename S>
TcmParams<S> TcmParams<S>::init(Index slots, Index channels, Rng& rng) {
  if (slots < 1 || channels < 1) throw std::invalid_argument("tcm: slots and channels must be positive");
  TcmParams p;
  p.w = randn<S>({slots, channels}, rng, 1.0 / std::sqrt(static_cast<double>(channels)));
  p.w_star = Tensor<S>::ones({slots});
  p.w_star2 = Tensor<S>::zeros({slots});
  return p;
}

template <typename S>
void TcmParams<S>::visit(const std::string& prefix, const ParamVisitor<S>& f) {
  f(prefix + ".w", w);
  f(prefix + ".w_star", w_star);
  f(prefix + ".w_star2", w_star2);
}

namespace {

// T x C x (h*w) view of the slot features.
template <typename S>
Tensor<S> stacked_features(const std::vector<Tensor<S>>& features, const TcmParams<S>& params) {
  if (static_cast<Index>(features.size()) != params.slots())
    throw std::invalid_argument("tcm: got " + std::to_string(features.size()) + " feature maps for " +
                                std::to_string(params.slots()) + " parameter slots");
  const Shape& s = features.front().shape();
  if (s.size() != 3 || s[0] != params.channels())
    throw ShapeError("tcm: feature map " + shape_str(s) + " does not have " + std::to_string(params.channels()) +
                     " channels");
  return reshape(stack(features), {params.slots(), s[0], s[1] * s[2]});
}

}  // namespace

template <typename S>
Tensor<S> temporal_correlation(const std::vector<Tensor<S>>& features, const TcmParams<S>& params) {
  const Tensor<S> x = stacked_features(features, params);
  const Index slots = params.slots();
  const Tensor<S> logits = sum(mul(x, reshape(params.w, {slots, params.channels(), 1})), 1);
  const Shape& s = features.front().shape();
  return reshape(softmax(logits, 0), {slots, s[1], s[2]});
}

template <typename S>
Tensor<S> normalize_correlation(const Tensor<S>& corr) {
  if (corr.rank() != 3) throw ShapeError("normalize_correlation: expected T x h x w, got " + shape_str(corr.shape()));
  const Index slots = corr.dim(0);
  const Tensor<S> flat = reshape(corr, {slots, corr.dim(1) * corr.dim(2)});
  return reshape(mul(flat, mean(flat, 1, true)), corr.shape());
}

template <typename S>
Tensor<S> blend(const std::vector<Tensor<S>>& features, const Tensor<S>& xhat, const TcmParams<S>& params,
                Index center) {
  const Index slots = params.slots();
  if (center < 0 || center >= slots)
    throw std::out_of_range("blend: center " + std::to_string(center) + " outside " + std::to_string(slots) +
                            " slots");
  const Tensor<S> x = stacked_features(features, params);
  const Shape& s = features.front().shape();
  const Index plane = s[1] * s[2];
  if (xhat.shape() != Shape{slots, s[1], s[2]})
    throw ShapeError("blend: normalized map " + shape_str(xhat.shape()) + " does not match features");

  const Tensor<S> pooled = sum(mul(x, reshape(xhat, {slots, 1, plane})), 2, true);           // T x C x 1
  const Tensor<S> inner = add(x, mul(reshape(params.w_star, {slots, 1, 1}), pooled));       // T x C x hw
  const Tensor<S> mixed = sum(mul(reshape(params.w_star2, {slots, 1, 1}), inner), 0);       // C x hw
  const Tensor<S> residual = reshape(features[static_cast<std::size_t>(center)], {s[0], plane});
  return reshape(add(residual, mixed), s);
}

template <typename S>
TcmOutput<S> tcm_forward(const std::vector<Tensor<S>>& features, const TcmParams<S>& params, Index center) {
  TcmOutput<S> out;
  out.attn = temporal_correlation(features, params);
  out.blended = blend(features, normalize_correlation(out.attn), params, center);
  return out;
}

template struct TcmParams<float>;
template struct TcmParams<double>;

#define VTU_INSTANTIATE_TCM(S)                                                                            \
  template Tensor<S> temporal_correlation(const std::vector<Tensor<S>>&, const TcmParams<S>&);            \
  template Tensor<S> normalize_correlation(const Tensor<S>&);                                             \
  template Tensor<S> blend(const std::vector<Tensor<S>>&, const Tensor<S>&, const TcmParams<S>&, Index); \
  template TcmOutput<S> tcm_forward(const std::vector<Tensor<S>>&, const TcmParams<S>&, Index);

VTU_INSTANTIATE_TCM(float)
VTU_INSTANTIATE_TCM(double)

#undef VTU_INSTANTIATE_TCM

}  // namespace vtu
