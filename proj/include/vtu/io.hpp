#pragma once

#include "vtu/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vtu {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// VTT1 layout: 8-byte magic "VTTENSR1", u32 rank, rank x u32 extents, then a
// little-endian f32 payload in row-major order.
inline constexpr char kVtt1Magic[8] = {'V', 'T', 'T', 'E', 'N', 'S', 'R', '1'};

std::vector<std::uint8_t> encode_vtt1(const Tensorf& t);
Tensorf decode_vtt1(const std::vector<std::uint8_t>& bytes);
void write_vtt1(const std::filesystem::path& path, const Tensorf& t);
Tensorf read_vtt1(const std::filesystem::path& path);

/// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// Binary H x W mask (0/1 values) to 0/255 PGM and back (nonzero = foreground).
void write_mask_pgm(const std::filesystem::path& path, const Tensorf& mask);
Tensorf read_mask_pgm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace vtu
