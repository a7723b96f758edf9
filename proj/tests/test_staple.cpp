#include "oracles.hpp"

#include "vtu/io.hpp"
#include "vtu/metrics.hpp"
#include "vtu/staple.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace vtu;
namespace fs = std::filesystem;

TEST(Staple, IdenticalRatersReproduceTheMask) {
  Rng rng(1);
  const auto truth = oracle::random_blob(rng, 32, 32);
  const auto res = staple({truth, truth, truth});
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.fused(), truth);
}

TEST(Staple, RecoversRaterQualities) {
  const std::vector<std::pair<double, double>> quality{{0.95, 0.98}, {0.85, 0.99}, {0.90, 0.97}};
  Rng rng(2);
  const auto truth = oracle::random_blob(rng, 64, 64);
  std::vector<BinaryMask> raters;
  for (auto [p, q] : quality) raters.push_back(oracle::simulate_rater(truth, p, q, rng));
  const auto res = staple(raters);
  for (std::size_t j = 0; j < quality.size(); ++j) {
    EXPECT_NEAR(res.sensitivity[j], quality[j].first, 0.05);
    EXPECT_NEAR(res.specificity[j], quality[j].second, 0.05);
  }
  EXPECT_GE(dsc(res.fused(), truth), 0.98);
}

TEST(Staple, LogLikelihoodNeverDecreases) {
  Rng rng(3);
  const auto truth = oracle::random_blob(rng, 48, 48);
  std::vector<BinaryMask> raters;
  for (int j = 0; j < 4; ++j) raters.push_back(oracle::simulate_rater(truth, 0.8, 0.9, rng));
  const auto res = staple(raters);
  ASSERT_GE(res.log_likelihood.size(), 2u);
  for (std::size_t i = 1; i < res.log_likelihood.size(); ++i)
    EXPECT_GE(res.log_likelihood[i], res.log_likelihood[i - 1] - 1e-9 * std::abs(res.log_likelihood[i - 1]));
}

TEST(Staple, AllEmptyRatersGiveEmptyFusion) {
  const BinaryMask empty(16, 16);
  const auto res = staple({empty, empty, empty});
  EXPECT_TRUE(res.fused().empty());
  for (double v : res.posterior) EXPECT_TRUE(std::isfinite(v));
}

TEST(Staple, RejectsBadInput) {
  EXPECT_THROW(staple({BinaryMask(4, 4)}), std::invalid_argument);
  EXPECT_THROW(staple({BinaryMask(4, 4), BinaryMask(4, 5)}), ShapeError);
}

TEST(Staple, PosteriorIsAProbability) {
  Rng rng(4);
  const auto truth = oracle::random_blob(rng, 32, 32);
  std::vector<BinaryMask> raters;
  for (int j = 0; j < 3; ++j) raters.push_back(oracle::simulate_rater(truth, 0.7, 0.8, rng));
  for (double v : staple(raters).posterior) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Staple, FuseDatasetWritesEveryInstance) {
  const fs::path root = fs::temp_directory_path() / "vtu_staple_test";
  fs::remove_all(root);
  Rng rng(5);
  std::vector<fs::path> dirs;
  for (const char* frame : {"f0", "f1"}) {
    const auto truth = oracle::random_blob(rng, 16, 16);
    for (int r = 0; r < 3; ++r) {
      const fs::path d = root / ("rater" + std::to_string(r));
      for (const char* inst : kInstances)
        write_mask_pgm(d / (std::string(frame) + "_" + inst + ".pgm"), to_tensor(oracle::simulate_rater(truth, 0.95, 0.98, rng)));
    }
  }
  for (int r = 0; r < 3; ++r) dirs.push_back(root / ("rater" + std::to_string(r)));
  const auto summary = fuse_dataset(dirs, root / "fused");
  EXPECT_EQ(summary.frames, 2);
  EXPECT_EQ(summary.masks_written, 4);
  EXPECT_TRUE(fs::exists(root / "fused" / "f1_pharynx.pgm"));
  EXPECT_TRUE(fs::exists(root / "fused" / "f1_pharynx.vtt1"));
  fs::remove(dirs[2] / "f0_bolus.pgm");
  EXPECT_THROW(fuse_dataset(dirs, root / "fused2"), std::runtime_error);
  fs::remove_all(root);
}
