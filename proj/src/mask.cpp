#include "vtu/mask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vtu {

Index BinaryMask::count() const {
  return std::accumulate(bits.begin(), bits.end(), Index{0}, [](Index acc, std::uint8_t b) { return acc + (b != 0); });
}

BinaryMask threshold(const Tensorf& probabilities, float level) {
  if (probabilities.rank() != 2) throw ShapeError("threshold: expected H x W map, got " + shape_str(probabilities.shape()));
  BinaryMask m(probabilities.dim(0), probabilities.dim(1));
  const auto data = probabilities.data();
  for (std::size_t i = 0; i < data.size(); ++i) m.bits[i] = data[i] > level ? 1 : 0;
  return m;
}

Tensorf to_tensor(const BinaryMask& mask) {
  std::vector<float> data(mask.bits.begin(), mask.bits.end());
  return Tensorf({mask.height, mask.width}, std::move(data));
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void dt_1d(const double* f, Index n, double* d, std::vector<Index>& v, std::vector<double>& z) {
  Index k = 0;
  Index first = 0;
  while (first < n && f[first] == kInf) ++first;
  if (first == n) {
    std::fill(d, d + n, kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (Index q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      const Index p = v[k];
      s = ((f[q] + double(q * q)) - (f[p] + double(p * p))) / (2.0 * double(q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double diff = double(q - v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const BinaryMask& features) {
  const Index h = features.height, w = features.width;
  std::vector<double> grid(static_cast<std::size_t>(h * w));
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = features.bits[i] ? 0.0 : kInf;
  const Index n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<Index> v(n);
  for (Index x = 0; x < w; ++x) {
    for (Index y = 0; y < h; ++y) f[y] = grid[y * w + x];
    dt_1d(f.data(), h, d.data(), v, z);
    for (Index y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  for (Index y = 0; y < h; ++y) {
    std::copy_n(grid.begin() + y * w, w, f.begin());
    dt_1d(f.data(), w, d.data(), v, z);
    std::copy_n(d.begin(), w, grid.begin() + y * w);
  }
  return grid;
}

std::vector<double> distance_field(const BinaryMask& mask) {
  const Index fg = mask.count();
  std::vector<double> out(static_cast<std::size_t>(mask.size()), 0.0);
  if (fg == 0 || fg == mask.size()) return out;
  BinaryMask background = mask;
  for (auto& b : background.bits) b = b ? 0 : 1;
  const auto to_fg = squared_distance_transform(mask);
  const auto to_bg = squared_distance_transform(background);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(mask.bits[i] ? to_bg[i] : to_fg[i]);
  return out;
}

BinaryMask boundary(const BinaryMask& mask) {
  BinaryMask b(mask.height, mask.width);
  for (Index y = 0; y < mask.height; ++y)
    for (Index x = 0; x < mask.width; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == mask.height - 1 || x == mask.width - 1 || !mask(y - 1, x) ||
                        !mask(y + 1, x) || !mask(y, x - 1) || !mask(y, x + 1);
      b(y, x) = edge ? 1 : 0;
    }
  return b;
}

}  // namespace vtu
