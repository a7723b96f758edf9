#pragma once

#include "vtu/decoder.hpp"
#include "vtu/mask.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace vtu {

/// Parameters of the synthetic swallow-video generator. Shape parameters of
/// the pharynx and the bolus trajectory are drawn per sequence from `seed`.
struct SceneSpec {
  std::uint64_t seed = 1;
  Index height = 64;
  Index width = 64;
  Index sequence_length = 20;
  double noise_sigma = 0.05;
  double occlusion_prob = 0.4;
  double occlusion_min = 0.35;  // patch side as a fraction of the frame width
  double occlusion_max = 0.6;

  void validate() const;
};

struct Sequence {
  std::string id;
  std::vector<Tensorf> frames;             // H x W, values in [0, 1]
  std::vector<MaskPair<float>> masks;      // binary 0/1 maps
  std::vector<BinaryMask> occlusion;       // pixels blanked in each frame
};

/// A snippet of t frames whose center frame is the supervision target.
struct FrameStack {
  std::vector<Tensorf> frames;
  Index center = 0;
  MaskPair<float> target;
  std::string sequence_id;
  Index frame_index = 0;

  std::string frame_id() const { return sequence_id + "/" + std::to_string(frame_index); }
};

/// Deterministic in spec.seed. The bolus enters from the top, descends along
/// the pharynx and leaves through the bottom, so the first and last frames of
/// a sequence carry an empty bolus mask. Occlusion blanks frames only.
Sequence generate_sequence(const SceneSpec& spec, const std::string& id = "seq");

/// One center-aligned stack per frame; missing neighbours at the sequence
/// ends are filled by repeating the first/last frame.
std::vector<FrameStack> extract_snippets(const Sequence& seq, Index t, Index stride = 1);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

/// Shuffles ids with `seed` and cuts them into train/val/test portions sized
/// round(f * n) for the first two fractions; the remainder goes to test.
DatasetSplit split_dataset(const std::vector<std::string>& ids, double train_frac = 0.70, double val_frac = 0.15,
                           std::uint64_t seed = 0);

struct AugmentDraw {
  bool flip = false;
  double angle_deg = 0.0;
};

inline constexpr double kMaxRotationDeg = 10.0;

/// Rotation uniform in [-10, 10] degrees and horizontal flip with p = 0.5.
AugmentDraw draw_augmentation(std::uint64_t seed);

/// Same transform on every frame (bilinear, zero fill) and on both target
/// masks (nearest neighbour, so masks stay binary).
FrameStack apply_augmentation(const FrameStack& stack, const AugmentDraw& draw);
FrameStack augment(const FrameStack& stack, std::uint64_t seed);

Tensorf flip_horizontal(const Tensorf& image);
/// Rotates an H x W map about its center by `angle_deg` (counter-clockwise
/// in image coordinates with y pointing down).
Tensorf rotate_bilinear(const Tensorf& image, double angle_deg);
Tensorf rotate_nearest(const Tensorf& image, double angle_deg);
/// Source coordinate (x, y) sampled by output pixel (ox, oy) under rotation.
std::pair<double, double> rotation_source(Index ox, Index oy, Index height, Index width, double angle_deg);

}  // namespace vtu
