#include "vtu/synthetic.hpp"

#include "vtu/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace vtu {

void SceneSpec::validate() const {
  if (height < 16 || width < 16 || height > 512 || width > 512 || height % 16 != 0 || width % 16 != 0)
    throw std::invalid_argument("scene: frame size " + std::to_string(height) + "x" + std::to_string(width) +
                                " must be a multiple of 16 in [16, 512]");
  if (sequence_length < 8) throw std::invalid_argument("scene: sequence_length must be at least 8");
  if (noise_sigma < 0) throw std::invalid_argument("scene: noise_sigma must be nonnegative");
  if (occlusion_prob < 0 || occlusion_prob > 1) throw std::invalid_argument("scene: occlusion_prob outside [0, 1]");
  if (occlusion_min <= 0 || occlusion_max < occlusion_min || occlusion_max > 1)
    throw std::invalid_argument("scene: occlusion size fractions must satisfy 0 < min <= max <= 1");
}

namespace {

// Pharynx: a vertical tube with a sinusoidal centerline, in normalized
// coordinates (u right, v down).
struct Tube {
  double top, bottom, center, amplitude, frequency, phase, half_width, flare;

  double centerline(double v) const { return center + amplitude * std::sin(frequency * v + phase); }
  double radius(double v) const { return half_width + flare * (v - top); }
  bool contains(double u, double v) const {
    return v >= top && v <= bottom && std::abs(u - centerline(v)) <= radius(v);
  }
};

struct Ellipse {
  double cu, cv, ru, rv;
  bool contains(double u, double v) const {
    const double a = (u - cu) / ru, b = (v - cv) / rv;
    return a * a + b * b <= 1.0;
  }
};

}  // namespace

Sequence generate_sequence(const SceneSpec& spec, const std::string& id) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x5CE7E));
  const Index h = spec.height, w = spec.width, n = spec.sequence_length;

  Tube tube;
  tube.top = rng.uniform(0.04, 0.14);
  tube.bottom = rng.uniform(0.84, 0.96);
  tube.center = rng.uniform(0.40, 0.60);
  tube.amplitude = rng.uniform(0.03, 0.08);
  tube.frequency = rng.uniform(2.0, 5.0);
  tube.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  tube.half_width = rng.uniform(0.07, 0.10);
  tube.flare = rng.uniform(-0.03, 0.03);

  const double tex_a = rng.uniform(0.5, 2.0), tex_b = rng.uniform(0.5, 2.0), tex_phase = rng.uniform(0.0, 6.28);
  const double background = rng.uniform(0.45, 0.55);
  const double pharynx_level = rng.uniform(0.18, 0.28);
  const double bolus_level = rng.uniform(0.85, 0.95);

  // Bolus timeline: center travels from just above the image to just below it.
  const double rv0 = rng.uniform(0.08, 0.12);
  const Index enter = rng.integer(1, 3);
  const Index exit = n - rng.integer(2, 4);

  Sequence seq;
  seq.id = id;
  for (Index k = 0; k < n; ++k) {
    std::vector<float> frame(static_cast<std::size_t>(h * w));
    BinaryMask bolus(h, w), pharynx(h, w), occluded(h, w);

    std::optional<Ellipse> bolus_shape;
    if (k >= enter && k <= exit) {
      const double s = double(k - enter) / double(exit - enter);
      Ellipse e;
      e.rv = rv0 * rng.uniform(0.9, 1.1);
      e.cv = -e.rv + s * (1.0 + 2.0 * e.rv);
      e.cu = tube.centerline(std::clamp(e.cv, tube.top, tube.bottom));
      e.ru = tube.half_width * rng.uniform(0.8, 1.0);
      bolus_shape = e;
    }

    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double u = (double(x) + 0.5) / double(w), v = (double(y) + 0.5) / double(h);
        double value = background + 0.06 * std::sin(2.0 * std::numbers::pi * (tex_a * u + tex_b * v) + tex_phase);
        if (tube.contains(u, v)) {
          pharynx(y, x) = 1;
          value = pharynx_level;
        }
        if (bolus_shape && bolus_shape->contains(u, v)) {
          bolus(y, x) = 1;
          value = bolus_level;
        }
        frame[static_cast<std::size_t>(y * w + x)] = static_cast<float>(value);
      }
    for (auto& v : frame) {
      const double noise = spec.noise_sigma > 0 ? rng.normal(0.0, spec.noise_sigma) : 0.0;
      v = static_cast<float>(std::clamp(double(v) + noise, 0.0, 1.0));
    }

    if (rng.bernoulli(spec.occlusion_prob)) {
      const Index side = static_cast<Index>(std::round(rng.uniform(spec.occlusion_min, spec.occlusion_max) * double(w)));
      const Index oy = rng.integer(0, std::max<Index>(h - side, 0));
      const Index ox = rng.integer(0, std::max<Index>(w - side, 0));
      for (Index y = oy; y < std::min(h, oy + side); ++y)
        for (Index x = ox; x < std::min(w, ox + side); ++x) {
          occluded(y, x) = 1;
          frame[static_cast<std::size_t>(y * w + x)] = 0.0f;
        }
    }

    seq.frames.emplace_back(Shape{h, w}, std::move(frame));
    seq.masks.push_back({to_tensor(bolus), to_tensor(pharynx)});
    seq.occlusion.push_back(std::move(occluded));
  }
  return seq;
}

std::vector<FrameStack> extract_snippets(const Sequence& seq, Index t, Index stride) {
  if (t < 1 || t % 2 == 0) throw std::invalid_argument("extract_snippets: t must be odd and >= 1");
  if (stride < 1) throw std::invalid_argument("extract_snippets: stride must be >= 1");
  const Index n = static_cast<Index>(seq.frames.size());
  const Index half = (t - 1) / 2;
  std::vector<FrameStack> out;
  for (Index c = 0; c < n; c += stride) {
    FrameStack s;
    s.center = half;
    s.sequence_id = seq.id;
    s.frame_index = c;
    for (Index k = -half; k <= half; ++k) s.frames.push_back(seq.frames[std::clamp<Index>(c + k, 0, n - 1)]);
    s.target = seq.masks[static_cast<std::size_t>(c)];
    out.push_back(std::move(s));
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, double train_frac, double val_frac,
                           std::uint64_t seed) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    throw std::invalid_argument("split_dataset: invalid fractions");
  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  Rng rng(mix_seed(seed, 0x5B117));
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
  const auto n_val = std::min(static_cast<std::size_t>(std::llround(val_frac * n)), order.size() - n_train);
  DatasetSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

AugmentDraw draw_augmentation(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xA06));
  AugmentDraw d;
  d.angle_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
  d.flip = rng.bernoulli(0.5);
  return d;
}

std::pair<double, double> rotation_source(Index ox, Index oy, Index height, Index width, double angle_deg) {
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cx = 0.5 * double(width - 1), cy = 0.5 * double(height - 1);
  const double dx = double(ox) - cx, dy = double(oy) - cy;
  // Inverse rotation maps the output pixel back into the source image.
  const double c = std::cos(theta), s = std::sin(theta);
  return {cx + c * dx + s * dy, cy - s * dx + c * dy};
}

Tensorf flip_horizontal(const Tensorf& image) {
  if (image.rank() != 2) throw ShapeError("flip_horizontal: expected H x W, got " + shape_str(image.shape()));
  const Index h = image.dim(0), w = image.dim(1);
  Tensorf out({h, w});
  auto dst = out.mutable_data();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) dst[y * w + x] = image[y * w + (w - 1 - x)];
  return out;
}

Tensorf rotate_bilinear(const Tensorf& image, double angle_deg) {
  if (image.rank() != 2) throw ShapeError("rotate_bilinear: expected H x W, got " + shape_str(image.shape()));
  const Index h = image.dim(0), w = image.dim(1);
  Tensorf out({h, w});
  auto dst = out.mutable_data();
  auto sample = [&](Index y, Index x) -> double {
    return (x < 0 || y < 0 || x >= w || y >= h) ? 0.0 : double(image[y * w + x]);
  };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const auto [sx, sy] = rotation_source(x, y, h, w, angle_deg);
      const double fx = std::floor(sx), fy = std::floor(sy);
      const auto x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
      const double ax = sx - fx, ay = sy - fy;
      const double top = (1 - ax) * sample(y0, x0) + ax * sample(y0, x0 + 1);
      const double bot = (1 - ax) * sample(y0 + 1, x0) + ax * sample(y0 + 1, x0 + 1);
      dst[y * w + x] = static_cast<float>((1 - ay) * top + ay * bot);
    }
  return out;
}

Tensorf rotate_nearest(const Tensorf& image, double angle_deg) {
  if (image.rank() != 2) throw ShapeError("rotate_nearest: expected H x W, got " + shape_str(image.shape()));
  const Index h = image.dim(0), w = image.dim(1);
  Tensorf out({h, w});
  auto dst = out.mutable_data();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const auto [sx, sy] = rotation_source(x, y, h, w, angle_deg);
      const auto nx = static_cast<Index>(std::lround(sx)), ny = static_cast<Index>(std::lround(sy));
      dst[y * w + x] = (nx < 0 || ny < 0 || nx >= w || ny >= h) ? 0.0f : image[ny * w + nx];
    }
  return out;
}

FrameStack apply_augmentation(const FrameStack& stack, const AugmentDraw& draw) {
  FrameStack out = stack;
  auto frame_op = [&](const Tensorf& f) {
    Tensorf r = rotate_bilinear(f, draw.angle_deg);
    return draw.flip ? flip_horizontal(r) : r;
  };
  auto mask_op = [&](const Tensorf& m) {
    Tensorf r = rotate_nearest(m, draw.angle_deg);
    return draw.flip ? flip_horizontal(r) : r;
  };
  for (auto& f : out.frames) f = frame_op(f);
  out.target.bolus = mask_op(stack.target.bolus);
  out.target.pharynx = mask_op(stack.target.pharynx);
  return out;
}

FrameStack augment(const FrameStack& stack, std::uint64_t seed) {
  return apply_augmentation(stack, draw_augmentation(seed));
}

}  // namespace vtu
