#include "vtu/io.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace vtu {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_vtt1(const Tensorf& t) {
  std::vector<std::uint8_t> out(std::begin(kVtt1Magic), std::end(kVtt1Magic));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (Index e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  out.reserve(out.size() + 4 * static_cast<std::size_t>(t.size()));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensorf decode_vtt1(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kVtt1Magic, 8) != 0)
    throw FormatError("not a VTT1 tensor (bad magic)");
  const std::uint32_t rank = get_u32(bytes, 8);
  if (rank > 16) throw FormatError("VTT1 rank " + std::to_string(rank) + " is implausible");
  std::size_t pos = 12;
  if (bytes.size() < pos + 4 * static_cast<std::size_t>(rank)) throw FormatError("truncated VTT1 header");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i, pos += 4) {
    const std::uint32_t e = get_u32(bytes, pos);
    if (e == 0) throw FormatError("VTT1 extent of zero");
    shape.push_back(static_cast<Index>(e));
  }
  const std::size_t n = static_cast<std::size_t>(shape_size(shape));
  if (bytes.size() != pos + 4 * n)
    throw FormatError("VTT1 payload length " + std::to_string(bytes.size() - pos) + " does not match shape " +
                      shape_str(shape));
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i, pos += 4) data[i] = std::bit_cast<float>(get_u32(bytes, pos));
  return Tensorf(std::move(shape), std::move(data));
}

void write_vtt1(const std::filesystem::path& path, const Tensorf& t) { write_file(path, encode_vtt1(t)); }

Tensorf read_vtt1(const std::filesystem::path& path) {
  try {
    return decode_vtt1(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height))
    throw FormatError("pgm: pixel count does not match extents");
  std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  write_file(path, bytes);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(path.string() + ": malformed PGM header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(path.string() + ": not a P5 PGM");
  pos = 2;
  GrayImage img;
  img.width = static_cast<int>(read_int());
  img.height = static_cast<int>(read_int());
  const long maxval = read_int();
  if (maxval != 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (img.width <= 0 || img.height <= 0 || bytes.size() < pos + n) throw FormatError(path.string() + ": truncated PGM");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

void write_mask_pgm(const std::filesystem::path& path, const Tensorf& mask) {
  if (mask.rank() != 2) throw ShapeError("mask must be H x W, got " + shape_str(mask.shape()));
  GrayImage img{static_cast<int>(mask.dim(1)), static_cast<int>(mask.dim(0)), {}};
  img.pixels.reserve(static_cast<std::size_t>(mask.size()));
  for (float v : mask.data()) img.pixels.push_back(v > 0.5f ? 255 : 0);
  write_pgm(path, img);
}

Tensorf read_mask_pgm(const std::filesystem::path& path) {
  const GrayImage img = read_pgm(path);
  std::vector<float> data;
  data.reserve(img.pixels.size());
  for (auto p : img.pixels) data.push_back(p != 0 ? 1.0f : 0.0f);
  return Tensorf({img.height, img.width}, std::move(data));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace vtu
