#pragma once

#include "vtu/mask.hpp"

#include <array>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace vtu {

struct Confusion {
  Index tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(const BinaryMask& pred, const BinaryMask& target);

/// 2TP / (2TP + FP + FN); 1 when both masks are empty.
double dsc(const BinaryMask& pred, const BinaryMask& target);
/// TP / (TP + FN); 1 when the target has no foreground.
double sensitivity(const Confusion& c);
/// TN / (TN + FP); 1 when the target has no background.
double specificity(const Confusion& c);

/// Sorted symmetric set of nearest-boundary distances: every boundary pixel of
/// `a` measured to the boundary of `b`, and vice versa. Both masks must be
/// nonempty.
std::vector<double> surface_distances(const BinaryMask& a, const BinaryMask& b);

/// Inclusive linear-interpolation percentile (q in [0, 1]) of sorted values.
double percentile_sorted(const std::vector<double>& sorted, double q);

double hd95(const BinaryMask& pred, const BinaryMask& target);
double asd(const BinaryMask& pred, const BinaryMask& target);

enum class Head { Bolus = 0, Pharynx = 1 };
inline constexpr std::array<Head, 2> kHeads{Head::Bolus, Head::Pharynx};
std::string head_name(Head h);

struct FrameMetrics {
  std::string frame_id;
  Head head = Head::Bolus;
  double dsc = 0, hd95 = 0, asd = 0, sensitivity = 0, specificity = 0;
  /// False when exactly one of prediction/target is empty; such frames are
  /// left out of the distance means.
  bool distances_valid = true;
  bool target_empty = false;
};

struct HeadSummary {
  double dsc = 0, hd95 = 0, asd = 0, sensitivity = 0, specificity = 0;
  Index frames = 0;
  Index empty_target_frames = 0;
  Index distance_excluded_frames = 0;
};

struct MetricReport {
  std::vector<FrameMetrics> rows;
  std::array<HeadSummary, 2> heads{};
  HeadSummary mean_of_heads;

  const HeadSummary& head(Head h) const { return heads[static_cast<std::size_t>(h)]; }
};

FrameMetrics frame_metrics(const std::string& frame_id, Head head, const BinaryMask& pred, const BinaryMask& target);

/// Aggregates rows by arithmetic mean per head and across heads.
MetricReport summarize(std::vector<FrameMetrics> rows);

/// Columns: frame_id,head,dsc,hd95,asd,sensitivity,specificity,distances_valid.
/// Footer rows carry frame_id "MEAN" for each head and for "mean_of_heads".
void write_metrics_csv(std::ostream& os, const MetricReport& report);
inline constexpr const char* kMetricsCsvHeader =
    "frame_id,head,dsc,hd95,asd,sensitivity,specificity,distances_valid";

/// RFC-4180 field quoting.
std::string csv_field(const std::string& value);

}  // namespace vtu
