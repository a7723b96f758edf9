#pragma once

#include "vtu/tensor.hpp"

#include <cstdint>
#include <vector>

namespace vtu {

/// Binary H x W mask stored row-major as 0/1 bytes.
struct BinaryMask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(Index h, Index w) : height(h), width(w), bits(static_cast<std::size_t>(h * w), 0) {}

  std::uint8_t operator()(Index y, Index x) const { return bits[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t& operator()(Index y, Index x) { return bits[static_cast<std::size_t>(y * width + x)]; }
  Index size() const { return height * width; }
  Index count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const BinaryMask&) const = default;
};

/// Foreground where value > threshold (strict).
BinaryMask threshold(const Tensorf& probabilities, float level = 0.5f);
Tensorf to_tensor(const BinaryMask& mask);

/// Squared Euclidean distance from every pixel to the nearest set pixel of
/// `features` (exact, separable lower-envelope transform). Pixels get +inf
/// when no feature pixel exists.
std::vector<double> squared_distance_transform(const BinaryMask& features);

/// Distance from each pixel to the nearest pixel of the opposite class
/// (foreground pixels measure to background and vice versa). All zeros when
/// the mask is empty or full.
std::vector<double> distance_field(const BinaryMask& mask);

/// Foreground pixels with at least one 4-neighbour in the background; pixels
/// outside the image count as background.
BinaryMask boundary(const BinaryMask& mask);

}  // namespace vtu
