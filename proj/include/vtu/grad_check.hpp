#pragma once

#include "vtu/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace vtu {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  Index worst_index = -1;
  Index checked = 0;
  bool finite = true;
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Relative errors are taken against max(|analytic|, |numeric|, floor), with
  /// floor = floor_fraction * (largest |numeric| seen). Entries whose
  /// gradient is orders of magnitude below the largest one are judged on that
  /// shared scale instead of their own.
  double floor_fraction = 1e-3;
  /// Check at most this many entries per tensor (0 = all), picked evenly.
  Index max_entries = 0;
};

using ScalarFn = std::function<Tensord(const std::vector<Tensord>&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every entry of
/// every input.
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensord> inputs, const GradCheckOptions& opts = {});

GradCheckReport grad_check(const std::function<Tensord(const Tensord&)>& f, const Tensord& x, double eps = 1e-5,
                           double tol = 1e-4);

/// Checks gradients w.r.t. tensors that `f` closes over (parameters), leaving
/// them in place. Each tensor is perturbed in place and restored.
GradCheckReport grad_check_params(const std::function<Tensord()>& f, std::vector<Tensord> params,
                                  const GradCheckOptions& opts = {});

}  // namespace vtu
