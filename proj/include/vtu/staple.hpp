#pragma once

#include "vtu/mask.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace vtu {

struct StapleOptions {
  /// Prior foreground probability; a negative value selects the mean
  /// foreground fraction across raters.
  double prior = -1.0;
  double tol = 1e-6;
  int max_iter = 100;
  double init_quality = 0.9999;
  double clamp_lo = 1e-5;
  double clamp_hi = 1.0 - 1e-5;
};

struct StapleResult {
  std::vector<double> posterior;  // per-pixel P(true label = 1)
  std::vector<double> sensitivity;
  std::vector<double> specificity;
  std::vector<double> log_likelihood;  // observed-data log-likelihood, one entry per E-step
  double prior = 0.5;
  int iterations = 0;
  bool converged = false;
  Index height = 0, width = 0;

  /// Foreground where posterior >= level.
  BinaryMask fused(double level = 0.5) const;
};

/// Expectation-maximization estimate of the hidden true segmentation and of
/// each rater's sensitivity/specificity from R >= 2 binary masks.
StapleResult staple(const std::vector<BinaryMask>& raters, const StapleOptions& opts = {});

inline constexpr std::array<const char*, 2> kInstances{"bolus", "pharynx"};

struct FuseSummary {
  Index frames = 0;
  Index masks_written = 0;
  Index non_converged = 0;
};

/// Fuses `<rater>/<frame_id>_<instance>.pgm` sets into
/// `<out>/<frame_id>_<instance>.pgm` (posterior >= 0.5) and matching
/// `.vtt1` posterior maps. Frames are those present in the first rater.
FuseSummary fuse_dataset(const std::vector<std::filesystem::path>& rater_dirs, const std::filesystem::path& out_dir,
                         const StapleOptions& opts = {});

}  // namespace vtu
