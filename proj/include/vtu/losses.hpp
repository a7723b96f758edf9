#pragma once

#include "vtu/decoder.hpp"
#include "vtu/ops.hpp"

namespace vtu {

struct LossWeights {
  double bce = 1.0 / 3.0;
  double dice = 1.0 / 3.0;
  double hausdorff = 1.0 / 3.0;

  /// Throws unless all weights are nonnegative and sum to 1 (within 1e-9).
  void validate() const;
};

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& pred, const Tensor<S>& target);

/// 1 - (2 sum(p y) + smooth) / (sum(p) + sum(y) + smooth).
template <typename S>
Tensor<S> dice_loss(const Tensor<S>& pred, const Tensor<S>& target, S smooth = S(1));

/// Distance-weighted squared error: mean((p - y)^2 * (dt(y)^2 + dt(p > 0.5)^2)),
/// where dt is distance_field(). The distance maps are recomputed from the
/// current prediction but treated as constants for differentiation.
template <typename S>
Tensor<S> hausdorff_dt_loss(const Tensor<S>& pred, const Tensor<S>& target);

/// Weighted per-head mixture, averaged over the two heads.
template <typename S>
Tensor<S> mixture_loss(const MaskPair<S>& preds, const MaskPair<S>& targets, const LossWeights& weights);

}  // namespace vtu
