#include "vtu/losses.hpp"

#include "vtu/mask.hpp"

#include <cmath>

namespace vtu {

void LossWeights::validate() const {
  if (bce < 0 || dice < 0 || hausdorff < 0) throw std::invalid_argument("loss weights must be nonnegative");
  if (std::abs(bce + dice + hausdorff - 1.0) > 1e-9)
    throw std::invalid_argument("loss weights must sum to 1, got " + std::to_string(bce + dice + hausdorff));
}

namespace {

template <typename S>
void require_same_shape(const Tensor<S>& pred, const Tensor<S>& target, const char* name) {
  if (pred.shape() != target.shape())
    throw ShapeError(std::string(name) + ": prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
}

template <typename S>
BinaryMask binarize(const Tensor<S>& t) {
  if (t.rank() != 2) throw ShapeError("loss inputs must be H x W maps, got " + shape_str(t.shape()));
  BinaryMask m(t.dim(0), t.dim(1));
  for (Index i = 0; i < t.size(); ++i) m.bits[static_cast<std::size_t>(i)] = t[i] > S(0.5) ? 1 : 0;
  return m;
}

}  // namespace

template <typename S>
Tensor<S> bce_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  require_same_shape(pred, target, "bce_loss");
  const S eps = S(kBceClamp);
  const Tensor<S> p = clamp(pred, eps, S(1) - eps);
  const Tensor<S> pos = mul(target, log(p));
  const Tensor<S> neg = mul(add_scalar(scale(target, S(-1)), S(1)), log(add_scalar(scale(p, S(-1)), S(1))));
  return scale(mean(add(pos, neg)), S(-1));
}

template <typename S>
Tensor<S> dice_loss(const Tensor<S>& pred, const Tensor<S>& target, S smooth) {
  require_same_shape(pred, target, "dice_loss");
  const Tensor<S> inter = sum(mul(pred, target));
  const Tensor<S> numer = add_scalar(scale(inter, S(2)), smooth);
  const Tensor<S> denom = add_scalar(add(sum(pred), sum(target)), smooth);
  return add_scalar(scale(div(numer, denom), S(-1)), S(1));
}

template <typename S>
Tensor<S> hausdorff_dt_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  require_same_shape(pred, target, "hausdorff_dt_loss");
  const auto dt_target = distance_field(binarize(target));
  const auto dt_pred = distance_field(binarize(pred));
  Tensor<S> weight(pred.shape());
  auto w = weight.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = S(dt_target[i] * dt_target[i] + dt_pred[i] * dt_pred[i]);
  return mean(mul(square(sub(pred, target)), weight));
}

template <typename S>
Tensor<S> mixture_loss(const MaskPair<S>& preds, const MaskPair<S>& targets, const LossWeights& weights) {
  weights.validate();
  auto head = [&](const Tensor<S>& p, const Tensor<S>& y) {
    Tensor<S> total = scale(bce_loss(p, y), S(weights.bce));
    total = add(total, scale(dice_loss(p, y), S(weights.dice)));
    return add(total, scale(hausdorff_dt_loss(p, y), S(weights.hausdorff)));
  };
  return scale(add(head(preds.bolus, targets.bolus), head(preds.pharynx, targets.pharynx)), S(0.5));
}

#define VTU_INSTANTIATE_LOSSES(S)                                                                     \
  template Tensor<S> bce_loss(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> dice_loss(const Tensor<S>&, const Tensor<S>&, S);                                \
  template Tensor<S> hausdorff_dt_loss(const Tensor<S>&, const Tensor<S>&);                           \
  template Tensor<S> mixture_loss(const MaskPair<S>&, const MaskPair<S>&, const LossWeights&);

VTU_INSTANTIATE_LOSSES(float)
VTU_INSTANTIATE_LOSSES(double)

#undef VTU_INSTANTIATE_LOSSES

}  // namespace vtu
