#include "vtu/metrics.hpp"
#include "vtu/synthetic.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace vtu;

namespace {

bool bitwise_equal(const Tensorf& a, const Tensorf& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

bool is_binary(const Tensorf& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

SceneSpec spec_with_seed(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  return s;
}

// Ellipse rasterized at pixel centers in a frame rotated by angle_deg about the
// image center: a pixel is inside when its rotation source is inside.
Tensorf ellipse_at_angle(Index h, Index w, double angle_deg) {
  Tensorf m = Tensorf::zeros({h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const auto [sx, sy] = rotation_source(x, y, h, w, angle_deg);
      const double u = (sx - 0.45 * double(w)) / (0.22 * double(w)), v = (sy - 0.55 * double(h)) / (0.12 * double(h));
      if (u * u + v * v <= 1.0) m.mutable_data()[static_cast<std::size_t>(y * w + x)] = 1.0f;
    }
  return m;
}

}  // namespace

TEST(Generate, SameSeedIsBitIdentical) {
  const auto a = generate_sequence(spec_with_seed(5)), b = generate_sequence(spec_with_seed(5));
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    EXPECT_TRUE(bitwise_equal(a.frames[k], b.frames[k]));
    EXPECT_TRUE(bitwise_equal(a.masks[k].bolus, b.masks[k].bolus));
    EXPECT_TRUE(bitwise_equal(a.masks[k].pharynx, b.masks[k].pharynx));
  }
  const auto c = generate_sequence(spec_with_seed(6));
  EXPECT_FALSE(bitwise_equal(a.frames[3], c.frames[3]));
}

TEST(Generate, CountsShapesAndRanges) {
  SceneSpec s = spec_with_seed(2);
  s.height = 48;
  s.width = 80;
  s.sequence_length = 12;
  const auto seq = generate_sequence(s);
  ASSERT_EQ(seq.frames.size(), 12u);
  ASSERT_EQ(seq.masks.size(), 12u);
  for (std::size_t k = 0; k < 12; ++k) {
    EXPECT_EQ(seq.frames[k].shape(), (Shape{48, 80}));
    EXPECT_EQ(seq.masks[k].bolus.shape(), (Shape{48, 80}));
    EXPECT_EQ(seq.masks[k].pharynx.shape(), (Shape{48, 80}));
    EXPECT_TRUE(is_binary(seq.masks[k].bolus));
    EXPECT_TRUE(is_binary(seq.masks[k].pharynx));
    for (float v : seq.frames[k].data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Generate, PharynxIsStatic) {
  const auto seq = generate_sequence(spec_with_seed(3));
  for (const auto& m : seq.masks) EXPECT_TRUE(bitwise_equal(m.pharynx, seq.masks[0].pharynx));
}

TEST(Generate, BolusEntersAndLeaves) {
  const auto seq = generate_sequence(spec_with_seed(4));
  EXPECT_EQ(threshold(seq.masks.front().bolus).count(), 0);
  EXPECT_EQ(threshold(seq.masks.back().bolus).count(), 0);
  Index top = -1, bottom = -1;
  for (std::size_t k = 0; k < seq.masks.size(); ++k) {
    const auto m = threshold(seq.masks[k].bolus);
    if (m.empty()) continue;
    Index ys = 0, n = 0;
    for (Index y = 0; y < m.height; ++y)
      for (Index x = 0; x < m.width; ++x)
        if (m(y, x)) ys += y, ++n;
    const Index cy = ys / n;
    if (top < 0) top = cy;
    bottom = cy;
  }
  ASSERT_GE(top, 0);
  EXPECT_GT(bottom, top);
}

TEST(Generate, EmptyBolusFractionOverSeeds) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto seq = generate_sequence(spec_with_seed(seed));
    Index empty = 0;
    for (const auto& m : seq.masks) empty += threshold(m.bolus).empty();
    const double f = double(empty) / double(seq.masks.size());
    EXPECT_GE(f, 0.10) << seed;
    EXPECT_LE(f, 0.50) << seed;
  }
}

TEST(Generate, OcclusionBlanksFramesOnly) {
  bool any = false;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto seq = generate_sequence(spec_with_seed(seed));
    ASSERT_EQ(seq.occlusion.size(), seq.frames.size());
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
      const auto& occ = seq.occlusion[k];
      for (Index y = 0; y < occ.height; ++y)
        for (Index x = 0; x < occ.width; ++x)
          if (occ(y, x)) {
            any = true;
            ASSERT_EQ(seq.frames[k].at({y, x}), 0.0f);
          }
    }
  }
  EXPECT_TRUE(any);
}

TEST(Generate, CenterBolusVisibleInStack) {
  // A center-frame bolus pixel counts as visible when at least one frame of its
  // t = 5 stack leaves that location unoccluded.
  Index total = 0, visible = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto seq = generate_sequence(spec_with_seed(seed));
    const Index n = static_cast<Index>(seq.frames.size());
    for (Index c = 0; c < n; ++c) {
      const auto bolus = threshold(seq.masks[static_cast<std::size_t>(c)].bolus);
      for (Index y = 0; y < bolus.height; ++y)
        for (Index x = 0; x < bolus.width; ++x) {
          if (!bolus(y, x)) continue;
          ++total;
          for (Index o = -2; o <= 2; ++o) {
            const Index k = std::clamp<Index>(c + o, 0, n - 1);
            if (!seq.occlusion[static_cast<std::size_t>(k)](y, x)) {
              ++visible;
              break;
            }
          }
        }
    }
  }
  ASSERT_GT(total, 0);
  EXPECT_GE(double(visible) / double(total), 0.95);
}

TEST(Generate, RejectsBadSpec) {
  SceneSpec s;
  s.height = 50;
  EXPECT_THROW(generate_sequence(s), std::invalid_argument);
  s = SceneSpec{};
  s.width = 1024;
  EXPECT_THROW(generate_sequence(s), std::invalid_argument);
  s = SceneSpec{};
  s.occlusion_prob = 1.5;
  EXPECT_THROW(generate_sequence(s), std::invalid_argument);
}

TEST(Snippets, SingleFrameStacks) {
  const auto seq = generate_sequence(spec_with_seed(7));
  const auto stacks = extract_snippets(seq, 1);
  ASSERT_EQ(stacks.size(), seq.frames.size());
  for (std::size_t k = 0; k < stacks.size(); ++k) {
    ASSERT_EQ(stacks[k].frames.size(), 1u);
    EXPECT_EQ(stacks[k].center, 0);
    EXPECT_TRUE(bitwise_equal(stacks[k].frames[0], seq.frames[k]));
  }
}

TEST(Snippets, ReplicationPadding) {
  const auto seq = generate_sequence(spec_with_seed(8));
  const auto stacks = extract_snippets(seq, 5);
  ASSERT_EQ(stacks.size(), 20u);
  const std::size_t first[5] = {0, 0, 0, 1, 2};
  for (std::size_t j = 0; j < 5; ++j) EXPECT_TRUE(bitwise_equal(stacks[0].frames[j], seq.frames[first[j]]));
  const std::size_t last[5] = {17, 18, 19, 19, 19};
  for (std::size_t j = 0; j < 5; ++j) EXPECT_TRUE(bitwise_equal(stacks[19].frames[j], seq.frames[last[j]]));
}

TEST(Snippets, TargetIsCenterFrame) {
  const auto seq = generate_sequence(spec_with_seed(9));
  for (Index t : {3, 5, 7}) {
    const auto stacks = extract_snippets(seq, t);
    for (const auto& s : stacks) {
      EXPECT_EQ(s.center, (t - 1) / 2);
      const auto k = static_cast<std::size_t>(s.frame_index);
      EXPECT_TRUE(bitwise_equal(s.frames[static_cast<std::size_t>(s.center)], seq.frames[k]));
      EXPECT_TRUE(bitwise_equal(s.target.bolus, seq.masks[k].bolus));
      EXPECT_TRUE(bitwise_equal(s.target.pharynx, seq.masks[k].pharynx));
    }
  }
}

TEST(Snippets, StrideAndEvenLength) {
  const auto seq = generate_sequence(spec_with_seed(10));
  EXPECT_EQ(extract_snippets(seq, 3, 4).size(), 5u);
  EXPECT_THROW(extract_snippets(seq, 4), std::invalid_argument);
}

TEST(Split, TwentySequences) {
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back("s" + std::to_string(i));
  const auto s = split_dataset(ids, 0.70, 0.15, 3);
  EXPECT_EQ(s.train.size(), 14u);
  EXPECT_EQ(s.val.size(), 3u);
  EXPECT_EQ(s.test.size(), 3u);
  std::set<std::string> seen;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& id : *part) EXPECT_TRUE(seen.insert(id).second) << id;
  EXPECT_EQ(seen.size(), 20u);
  const auto again = split_dataset(ids, 0.70, 0.15, 3);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
  auto shuffled = ids;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(split_dataset(shuffled, 0.70, 0.15, 3).val, s.val);
}

TEST(Augment, DrawIsDeterministicAndBounded) {
  int flips = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto d = draw_augmentation(seed);
    const auto e = draw_augmentation(seed);
    EXPECT_EQ(d.flip, e.flip);
    EXPECT_EQ(d.angle_deg, e.angle_deg);
    EXPECT_LE(std::abs(d.angle_deg), kMaxRotationDeg);
    flips += d.flip;
  }
  EXPECT_GT(flips, 150);
  EXPECT_LT(flips, 250);
}

TEST(Augment, FlipIsInvolution) {
  const auto seq = generate_sequence(spec_with_seed(11));
  const auto stack = extract_snippets(seq, 3)[6];
  const AugmentDraw d{true, 0.0};
  const auto twice = apply_augmentation(apply_augmentation(stack, d), d);
  EXPECT_TRUE(bitwise_equal(twice.target.bolus, stack.target.bolus));
  EXPECT_TRUE(bitwise_equal(twice.target.pharynx, stack.target.pharynx));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_TRUE(bitwise_equal(twice.frames[j], stack.frames[j]));
  const auto once = flip_horizontal(seq.frames[2]);
  EXPECT_EQ(once.at({5, 0}), seq.frames[2].at({5, 63}));
}

TEST(Augment, MasksStayBinary) {
  const auto seq = generate_sequence(spec_with_seed(12));
  for (const auto& stack : extract_snippets(seq, 5, 3))
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto a = augment(stack, seed);
      EXPECT_TRUE(is_binary(a.target.bolus));
      EXPECT_TRUE(is_binary(a.target.pharynx));
      EXPECT_EQ(a.frames.size(), stack.frames.size());
      for (const auto& f : a.frames)
        for (float v : f.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    }
}

TEST(Augment, ZeroAngleNoFlipIsIdentity) {
  const auto seq = generate_sequence(spec_with_seed(13));
  const auto stack = extract_snippets(seq, 3)[9];
  const auto a = apply_augmentation(stack, AugmentDraw{false, 0.0});
  for (std::size_t j = 0; j < 3; ++j) EXPECT_TRUE(bitwise_equal(a.frames[j], stack.frames[j]));
  EXPECT_TRUE(bitwise_equal(a.target.bolus, stack.target.bolus));
}

TEST(Augment, RotationMatchesRegeneratedShape) {
  // Oracle: the ellipse rasterized directly in the rotated frame. Nearest
  // sampling of the upright mask can only disagree on boundary pixels.
  for (double angle : {-10.0, -4.5, 3.0, 10.0}) {
    const auto upright = ellipse_at_angle(64, 64, 0.0);
    const auto rotated = rotate_nearest(upright, angle);
    const auto oracle = ellipse_at_angle(64, 64, angle);
    EXPECT_GE(dsc(threshold(rotated), threshold(oracle)), 0.95) << angle;
  }
}

TEST(Augment, FrameAndMaskStayAligned) {
  // A frame that equals its mask must still match the rotated mask after the
  // stack transform: bilinear frame and nearest mask sample the same source.
  const auto shape = ellipse_at_angle(64, 64, 0.0);
  FrameStack stack;
  stack.frames = {shape};
  stack.target = MaskPair<float>{shape, shape};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto draw = draw_augmentation(seed);
    const auto out = apply_augmentation(stack, draw);
    EXPECT_GE(dsc(threshold(out.frames[0]), threshold(out.target.bolus)), 0.97) << seed;
    const auto oracle = draw.flip ? flip_horizontal(ellipse_at_angle(64, 64, draw.angle_deg))
                                  : ellipse_at_angle(64, 64, draw.angle_deg);
    EXPECT_GE(dsc(threshold(out.target.bolus), threshold(oracle)), 0.95) << seed;
  }
}

TEST(Augment, QuarterTurnIsExact) {
  Tensorf m = Tensorf::zeros({8, 8});
  m.mutable_data()[1 * 8 + 6] = 1.0f;
  const auto r = rotate_nearest(m, 90.0);
  EXPECT_EQ(threshold(r).count(), 1);
  const auto b = rotate_bilinear(m, 90.0);
  float sum = 0;
  for (float v : b.data()) sum += v;
  EXPECT_NEAR(sum, 1.0f, 1e-5f);
}
