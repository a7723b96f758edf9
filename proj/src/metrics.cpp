#include "vtu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace vtu {

namespace {

void require_same_extent(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("mask extents differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
}

// Distances from every boundary pixel of `from` to the nearest boundary pixel of `to`.
void directed_distances(const BinaryMask& from, const BinaryMask& to, std::vector<double>& out) {
  const auto sq = squared_distance_transform(boundary(to));
  const BinaryMask edge = boundary(from);
  for (std::size_t i = 0; i < edge.bits.size(); ++i)
    if (edge.bits[i]) out.push_back(std::sqrt(sq[i]));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

Confusion confusion(const BinaryMask& pred, const BinaryMask& target) {
  require_same_extent(pred, target);
  Confusion c;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0, t = target.bits[i] != 0;
    if (p && t)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double dsc(const BinaryMask& pred, const BinaryMask& target) {
  const Confusion c = confusion(pred, target);
  const Index denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * double(c.tp) / double(denom);
}

double sensitivity(const Confusion& c) { return c.tp + c.fn == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fn); }

double specificity(const Confusion& c) { return c.tn + c.fp == 0 ? 1.0 : double(c.tn) / double(c.tn + c.fp); }

std::vector<double> surface_distances(const BinaryMask& a, const BinaryMask& b) {
  require_same_extent(a, b);
  if (a.empty() || b.empty()) throw std::invalid_argument("surface_distances: both masks must be nonempty");
  std::vector<double> d;
  directed_distances(a, b, d);
  directed_distances(b, a, d);
  std::sort(d.begin(), d.end());
  return d;
}

double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty list");
  const double pos = q * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double hd95(const BinaryMask& pred, const BinaryMask& target) {
  return percentile_sorted(surface_distances(pred, target), 0.95);
}

double asd(const BinaryMask& pred, const BinaryMask& target) {
  const auto d = surface_distances(pred, target);
  double total = 0;
  for (double v : d) total += v;
  return total / double(d.size());
}

std::string head_name(Head h) { return h == Head::Bolus ? "bolus" : "pharynx"; }

FrameMetrics frame_metrics(const std::string& frame_id, Head head, const BinaryMask& pred, const BinaryMask& target) {
  FrameMetrics m;
  m.frame_id = frame_id;
  m.head = head;
  const Confusion c = confusion(pred, target);
  m.dsc = dsc(pred, target);
  m.sensitivity = sensitivity(c);
  m.specificity = specificity(c);
  m.target_empty = target.empty();
  const bool pe = pred.empty(), te = target.empty();
  if (pe && te) {
    m.hd95 = m.asd = 0.0;
  } else if (pe != te) {
    m.distances_valid = false;
  } else {
    const auto d = surface_distances(pred, target);
    m.hd95 = percentile_sorted(d, 0.95);
    double total = 0;
    for (double v : d) total += v;
    m.asd = total / double(d.size());
  }
  return m;
}

MetricReport summarize(std::vector<FrameMetrics> rows) {
  MetricReport r;
  std::array<Index, 2> distance_frames{};
  for (const auto& m : rows) {
    auto& h = r.heads[static_cast<std::size_t>(m.head)];
    h.frames += 1;
    h.dsc += m.dsc;
    h.sensitivity += m.sensitivity;
    h.specificity += m.specificity;
    if (m.target_empty) h.empty_target_frames += 1;
    if (m.distances_valid) {
      h.hd95 += m.hd95;
      h.asd += m.asd;
      distance_frames[static_cast<std::size_t>(m.head)] += 1;
    } else {
      h.distance_excluded_frames += 1;
    }
  }
  for (std::size_t k = 0; k < 2; ++k) {
    auto& h = r.heads[k];
    if (h.frames > 0) {
      h.dsc /= double(h.frames);
      h.sensitivity /= double(h.frames);
      h.specificity /= double(h.frames);
    }
    if (distance_frames[k] > 0) {
      h.hd95 /= double(distance_frames[k]);
      h.asd /= double(distance_frames[k]);
    }
  }
  auto& m = r.mean_of_heads;
  m.dsc = 0.5 * (r.heads[0].dsc + r.heads[1].dsc);
  m.hd95 = 0.5 * (r.heads[0].hd95 + r.heads[1].hd95);
  m.asd = 0.5 * (r.heads[0].asd + r.heads[1].asd);
  m.sensitivity = 0.5 * (r.heads[0].sensitivity + r.heads[1].sensitivity);
  m.specificity = 0.5 * (r.heads[0].specificity + r.heads[1].specificity);
  m.frames = r.heads[0].frames + r.heads[1].frames;
  m.empty_target_frames = r.heads[0].empty_target_frames + r.heads[1].empty_target_frames;
  m.distance_excluded_frames = r.heads[0].distance_excluded_frames + r.heads[1].distance_excluded_frames;
  r.rows = std::move(rows);
  return r;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

void write_metrics_csv(std::ostream& os, const MetricReport& report) {
  os << kMetricsCsvHeader << "\r\n";
  for (const auto& m : report.rows)
    os << csv_field(m.frame_id) << ',' << head_name(m.head) << ',' << fmt(m.dsc) << ','
       << (m.distances_valid ? fmt(m.hd95) : "") << ',' << (m.distances_valid ? fmt(m.asd) : "") << ','
       << fmt(m.sensitivity) << ',' << fmt(m.specificity) << ',' << (m.distances_valid ? 1 : 0) << "\r\n";
  auto footer = [&](const std::string& head, const HeadSummary& h) {
    os << "MEAN," << head << ',' << fmt(h.dsc) << ',' << fmt(h.hd95) << ',' << fmt(h.asd) << ','
       << fmt(h.sensitivity) << ',' << fmt(h.specificity) << ',' << h.frames - h.distance_excluded_frames << "\r\n";
  };
  footer("bolus", report.heads[0]);
  footer("pharynx", report.heads[1]);
  footer("mean_of_heads", report.mean_of_heads);
}

}  // namespace vtu
