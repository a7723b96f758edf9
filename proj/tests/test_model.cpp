#include "oracles.hpp"

#include "vtu/grad_check.hpp"
#include "vtu/model.hpp"

#include <gtest/gtest.h>

#include <chrono>

using namespace vtu;

namespace {

Tensord rand_t(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return rand_uniform<double>(std::move(s), rng, lo, hi);
}

std::vector<Tensord> rand_maps(Index T, Index C, Index h, Index w, std::uint64_t seed) {
  std::vector<Tensord> out;
  for (Index t = 0; t < T; ++t) out.push_back(rand_t({C, h, w}, seed + static_cast<std::uint64_t>(t)));
  return out;
}

TcmParams<double> rand_tcm(Index T, Index C, std::uint64_t seed) {
  TcmParams<double> p;
  p.w = rand_t({T, C}, seed);
  p.w_star = rand_t({T}, seed + 1);
  p.w_star2 = rand_t({T}, seed + 2);
  return p;
}

bool bitwise_equal(const Tensorf& a, const Tensorf& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

ModelConfig small_config(Index t) {
  ModelConfig c;
  c.height = c.width = 32;
  c.snippet_length = t;
  c.encoder.stage_channels = {4, 4, 8, 8};
  c.encoder.blocks_per_stage = {1, 1, 1, 1};
  c.encoder.norm_groups = 2;
  c.vit.hidden_dim = 8;
  c.vit.num_layers = 1;
  c.vit.num_heads = 2;
  c.vit.mlp_dim = 8;
  c.decoder.final_channels = 4;
  return c;
}

}  // namespace

// Encoder

TEST(Encoder, ShapesAtDefaults) {
  EncoderConfig cfg;
  Rng rng(1);
  auto p = EncoderParams<float>::init(cfg, rng);
  auto out = encode_frame(Tensorf::zeros({1, 64, 64}), p);
  EXPECT_EQ(out.deep.shape(), (Shape{128, 4, 4}));
  EXPECT_EQ(out.skips[0].shape(), (Shape{16, 32, 32}));
  EXPECT_EQ(out.skips[1].shape(), (Shape{32, 16, 16}));
  EXPECT_EQ(out.skips[2].shape(), (Shape{64, 8, 8}));
}

TEST(Encoder, ShapeIsPureFunctionOfSize) {
  EncoderConfig cfg;
  cfg.stage_channels = {4, 8, 8, 16};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  Rng rng(2);
  auto p = EncoderParams<float>::init(cfg, rng);
  for (Index s : {32, 64, 128}) {
    auto out = encode_frame(Tensorf::zeros({1, s, s + 16}), p);
    EXPECT_EQ(out.deep.shape(), (Shape{16, s / 16, (s + 16) / 16}));
  }
}

TEST(Encoder, RejectsIndivisibleExtent) {
  EncoderConfig cfg;
  Rng rng(3);
  auto p = EncoderParams<float>::init(cfg, rng);
  EXPECT_THROW(encode_frame(Tensorf::zeros({1, 40, 64}), p), ShapeError);
}

TEST(Encoder, ZeroInputWithZeroFinalGainsGivesZeroDeep) {
  EncoderConfig cfg;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  Rng rng(4);
  auto p = EncoderParams<float>::init(cfg, rng);
  auto& last = p.stages.back().back();
  for (auto& g : last.conv2.gain.mutable_data()) g = 0;
  for (auto& g : last.projection->gain.mutable_data()) g = 0;
  auto out = encode_frame(Tensorf::zeros({1, 32, 32}), p);
  for (float v : out.deep.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, SingleFrameStackEqualsEncodeFrame) {
  EncoderConfig cfg;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  Rng rng(5);
  auto p = EncoderParams<float>::init(cfg, rng);
  Rng data(6);
  auto frame = rand_uniform<float>({1, 32, 32}, data);
  auto single = encode_frame(frame, p);
  auto stacked = encode_stack(std::vector<Tensorf>{frame}, p, 0);
  ASSERT_EQ(stacked.size(), 1u);
  EXPECT_TRUE(bitwise_equal(single.deep, stacked[0].deep));
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(bitwise_equal(single.skips[k], stacked[0].skips[k]));
}

TEST(Encoder, DuplicatedFramesGiveIdenticalDeepMaps) {
  EncoderConfig cfg;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  Rng rng(7);
  auto p = EncoderParams<float>::init(cfg, rng);
  Rng data(8);
  auto frame = rand_uniform<float>({1, 32, 32}, data);
  auto out = encode_stack(std::vector<Tensorf>(5, frame), p, 2);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& o : out) EXPECT_TRUE(bitwise_equal(o.deep, out[0].deep));
  EXPECT_EQ(out[2].skips[0].shape(), (Shape{16, 16, 16}));
}

TEST(Encoder, FrameOrderPermutesDeepMaps) {
  EncoderConfig cfg;
  cfg.stage_channels = {4, 4, 8, 8};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  Rng rng(9);
  auto p = EncoderParams<float>::init(cfg, rng);
  Rng data(10);
  std::vector<Tensorf> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(rand_uniform<float>({1, 32, 32}, data));
  auto a = encode_stack(frames, p, 1);
  auto b = encode_stack(std::vector<Tensorf>{frames[2], frames[0], frames[1]}, p, 1);
  EXPECT_TRUE(bitwise_equal(a[2].deep, b[0].deep));
  EXPECT_TRUE(bitwise_equal(a[0].deep, b[1].deep));
  EXPECT_TRUE(bitwise_equal(a[1].deep, b[2].deep));
}

TEST(Encoder, GradientReachesFirstKernel) {
  EncoderConfig cfg;
  cfg.stage_channels = {2, 2, 4, 4};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  cfg.norm_groups = 2;
  Rng rng(11);
  auto p = EncoderParams<double>::init(cfg, rng);
  auto frame = rand_t({1, 16, 16}, 12, 0, 1);
  auto probe = rand_t({4, 1, 1}, 13);
  GradCheckOptions opts;
  opts.max_entries = 8;
  auto r = grad_check_params([&] { return sum(mul(encode_frame(frame, p).deep, probe)); },
                             {p.stages[0][0].conv1.kernel}, opts);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

// Temporal context

TEST(TemporalContext, CorrelationMatchesScalarOracle) {
  for (Index T : {1, 3, 5})
    for (Index C : {2, 4})
      for (Index hw : {3, 5}) {
        auto feats = rand_maps(T, C, hw, hw, 100 + T * 10 + C);
        auto p = rand_tcm(T, C, 200 + T);
        auto corr = temporal_correlation(feats, p);
        auto ref = oracle::correlation(feats, p.w);
        for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(corr[static_cast<Index>(i)], ref[i], 1e-12);
      }
}

TEST(TemporalContext, CorrelationSumsToOneOverSlots) {
  auto feats = rand_maps(5, 4, 3, 3, 300);
  for (auto& f : feats)
    for (auto& v : f.mutable_data()) v *= 50;
  auto corr = temporal_correlation(feats, rand_tcm(5, 4, 301));
  for (Index i = 0; i < 9; ++i) {
    double s = 0;
    for (Index t = 0; t < 5; ++t) s += corr[t * 9 + i];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(TemporalContext, UniformForIdenticalFramesAndWeights) {
  auto f = rand_t({3, 4, 4}, 310);
  TcmParams<double> p = rand_tcm(3, 3, 311);
  for (Index t = 1; t < 3; ++t)
    for (Index c = 0; c < 3; ++c) p.w.mutable_data()[static_cast<std::size_t>(t * 3 + c)] = p.w[c];
  auto corr = temporal_correlation(std::vector<Tensord>(3, f), p);
  for (double v : corr.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(TemporalContext, SingleSlotIsAllOnes) {
  auto corr = temporal_correlation(rand_maps(1, 2, 3, 3, 320), rand_tcm(1, 2, 321));
  for (double v : corr.data()) EXPECT_EQ(v, 1.0);
}

TEST(TemporalContext, SlotCountMismatchThrows) {
  EXPECT_THROW(temporal_correlation(rand_maps(2, 2, 3, 3, 330), rand_tcm(3, 2, 331)), std::invalid_argument);
}

TEST(TemporalContext, NormalizationMatchesOracle) {
  auto corr = rand_t({3, 4, 5}, 340, 0, 1);
  auto xhat = normalize_correlation(corr);
  auto ref = oracle::normalized(std::vector<double>(corr.data().begin(), corr.data().end()), 3, 20);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(xhat[static_cast<Index>(i)], ref[i], 1e-12);
}

TEST(TemporalContext, NormalizationOfUniformMapIsSquare) {
  auto xhat = normalize_correlation(Tensord::full({2, 3, 3}, 0.3));
  for (double v : xhat.data()) EXPECT_NEAR(v, 0.09, 1e-15);
  auto zero = normalize_correlation(Tensord::zeros({2, 3, 3}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(TemporalContext, BlendMatchesOracle) {
  for (Index T : {1, 3, 5}) {
    auto feats = rand_maps(T, 4, 3, 3, 400 + T);
    auto p = rand_tcm(T, 4, 410 + T);
    auto xhat = rand_t({T, 3, 3}, 420 + T, 0, 1);
    const Index center = (T - 1) / 2;
    auto z = blend(feats, xhat, p, center);
    auto ref = oracle::blended(feats, std::vector<double>(xhat.data().begin(), xhat.data().end()), p.w_star,
                               p.w_star2, center);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(z[static_cast<Index>(i)], ref[i], 1e-12);
  }
}

TEST(TemporalContext, ZeroSecondGainIsIdentityOnCenter) {
  auto feats = rand_maps(5, 4, 3, 3, 430);
  auto p = rand_tcm(5, 4, 431);
  for (auto& v : p.w_star2.mutable_data()) v = 0;
  auto out = tcm_forward(feats, p, 2);
  for (Index i = 0; i < out.blended.size(); ++i) EXPECT_EQ(out.blended[i], feats[2][i]);
}

TEST(TemporalContext, SingleSlotDoubles) {
  auto feats = rand_maps(1, 3, 4, 4, 440);
  TcmParams<double> p = rand_tcm(1, 3, 441);
  p.w_star2 = Tensord::ones({1});
  p.w_star = Tensord::zeros({1});
  auto out = tcm_forward(feats, p, 0);
  for (Index i = 0; i < out.blended.size(); ++i) EXPECT_DOUBLE_EQ(out.blended[i], 2 * feats[0][i]);
}

TEST(TemporalContext, CenterOutOfRangeThrows) {
  auto feats = rand_maps(3, 2, 3, 3, 450);
  auto p = rand_tcm(3, 2, 451);
  EXPECT_THROW(blend(feats, normalize_correlation(temporal_correlation(feats, p)), p, 3), std::out_of_range);
}

TEST(TemporalContext, PermutingNonCenterSlotsWithParameters) {
  auto feats = rand_maps(5, 3, 3, 3, 460);
  auto p = rand_tcm(5, 3, 461);
  auto a = tcm_forward(feats, p, 2);
  const std::vector<Index> perm{4, 3, 2, 1, 0};
  std::vector<Tensord> pf;
  TcmParams<double> pp{Tensord::zeros({5, 3}), Tensord::zeros({5}), Tensord::zeros({5})};
  for (Index t = 0; t < 5; ++t) {
    const Index s = perm[static_cast<std::size_t>(t)];
    pf.push_back(feats[static_cast<std::size_t>(s)]);
    for (Index c = 0; c < 3; ++c) pp.w.mutable_data()[static_cast<std::size_t>(t * 3 + c)] = p.w[s * 3 + c];
    pp.w_star.mutable_data()[static_cast<std::size_t>(t)] = p.w_star[s];
    pp.w_star2.mutable_data()[static_cast<std::size_t>(t)] = p.w_star2[s];
  }
  auto b = tcm_forward(pf, pp, 2);
  for (Index i = 0; i < a.blended.size(); ++i) EXPECT_NEAR(a.blended[i], b.blended[i], 1e-12);
}

TEST(TemporalContext, FullBlockGradient) {
  auto feats = rand_maps(3, 4, 3, 3, 470);
  auto p = rand_tcm(3, 4, 471);
  std::vector<Tensord> inputs = feats;
  inputs.push_back(p.w);
  inputs.push_back(p.w_star);
  inputs.push_back(p.w_star2);
  auto r = grad_check(
      [](const std::vector<Tensord>& v) {
        TcmParams<double> q{v[3], v[4], v[5]};
        return sum(tcm_forward(std::vector<Tensord>{v[0], v[1], v[2]}, q, 1).blended);
      },
      inputs);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(TemporalContext, AdaptSnippet) {
  const std::vector<int> five{0, 1, 2, 3, 4};
  EXPECT_EQ(adapt_snippet(five, 3), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(adapt_snippet(std::vector<int>{7, 8, 9}, 5), (std::vector<int>{7, 7, 8, 9, 9}));
  EXPECT_EQ(adapt_snippet(five, 5), five);
}

// Vision transformer

namespace {
VitParams<double> rand_vit(Index C, Index N, Index D, Index layers, Index heads, std::uint64_t seed) {
  VitConfig cfg;
  cfg.hidden_dim = D;
  cfg.num_layers = layers;
  cfg.num_heads = heads;
  cfg.mlp_dim = 2 * D;
  Rng rng(seed);
  auto p = VitParams<double>::init(cfg, C, N, rng);
  p.pos_embed = rand_t({N, D}, seed + 1);
  std::uint64_t s = seed + 2;
  p.visit("", [&](const std::string& name, Tensord& t) {
    if (name.find("bias") != std::string::npos || name.find("gain") != std::string::npos)
      t = rand_t(t.shape(), s++, -0.5, 1.5);
  });
  return p;
}
}  // namespace

TEST(Vit, PatchEmbedMatchesHandProduct) {
  auto p = rand_vit(2, 4, 3, 0, 1, 500);
  auto feature = rand_t({2, 2, 2}, 501);
  auto z = patch_embed(feature, p);
  auto ref = oracle::patch_embed(feature, p.patch_proj, p.pos_embed);
  ASSERT_EQ(z.shape(), (Shape{4, 3}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(z[static_cast<Index>(i)], ref[i], 1e-12);
}

TEST(Vit, PatchEmbedOfZeroFeature) {
  auto p = rand_vit(2, 4, 3, 0, 1, 510);
  auto z = patch_embed(Tensord::zeros({2, 2, 2}), p);
  for (Index i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], p.pos_embed[i]);
  p.pos_embed = Tensord::zeros({4, 3});
  z = patch_embed(Tensord::zeros({2, 2, 2}), p);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Vit, PatchCountMismatchThrows) {
  auto p = rand_vit(2, 4, 3, 0, 1, 520);
  EXPECT_THROW(patch_embed(Tensord::zeros({2, 3, 2}), p), ShapeError);
}

TEST(Vit, AttentionMatchesScalarOracle) {
  for (Index heads : {1, 2}) {
    auto p = rand_vit(2, 3, 4, 1, heads, 530 + heads);
    auto x = rand_t({3, 4}, 540);
    auto y = msa(x, p.layers[0], heads);
    auto ref = oracle::msa(x, p.layers[0], heads);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[static_cast<Index>(i)], ref[i], 1e-12);
    auto b = transformer_block(x, p.layers[0], heads);
    auto bref = oracle::transformer_block(x, p.layers[0], heads);
    for (std::size_t i = 0; i < bref.size(); ++i) EXPECT_NEAR(b[static_cast<Index>(i)], bref[i], 1e-12);
  }
}

TEST(Vit, AttentionRowsAreStochastic) {
  auto p = rand_vit(2, 6, 8, 1, 2, 550);
  std::vector<Tensord> attn;
  msa(rand_t({6, 8}, 551, -3, 3), p.layers[0], 2, &attn);
  ASSERT_EQ(attn.size(), 2u);
  for (const auto& a : attn)
    for (Index r = 0; r < 6; ++r) {
      double s = 0;
      for (Index c = 0; c < 6; ++c) s += a.at({r, c});
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Vit, SingleTokenAttendsToItself) {
  auto p = rand_vit(2, 1, 4, 1, 1, 560);
  auto x = rand_t({1, 4}, 561);
  const auto& L = p.layers[0];
  auto expected = add(x, L.out_proj(L.value(layer_norm(x, L.ln1_gain, L.ln1_bias))));
  auto y = msa(x, L, 1);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expected[i], 1e-14);
}

TEST(Vit, ZeroedBranchOutputsMakeBlockIdentity) {
  auto p = rand_vit(4, 9, 8, 2, 2, 570);
  for (auto& L : p.layers) {
    L.out_proj.weight = Tensord::zeros(L.out_proj.weight.shape());
    L.out_proj.bias = Tensord::zeros(L.out_proj.bias.shape());
    L.mlp_out.weight = Tensord::zeros(L.mlp_out.weight.shape());
    L.mlp_out.bias = Tensord::zeros(L.mlp_out.bias.shape());
  }
  auto feature = rand_t({4, 3, 3}, 571);
  auto z0 = patch_embed(feature, p);
  auto z = vit_forward(feature, p);
  for (Index i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], z0[i]);
}

TEST(Vit, StackedLayersEqualComposition) {
  auto p = rand_vit(4, 4, 8, 2, 2, 580);
  auto feature = rand_t({4, 2, 2}, 581);
  auto z = vit_forward(feature, p);
  auto manual = transformer_block(transformer_block(patch_embed(feature, p), p.layers[0], 2), p.layers[1], 2);
  for (Index i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], manual[i]);
}

TEST(Vit, ZeroLayersReturnsEmbedding) {
  auto p = rand_vit(4, 4, 8, 0, 2, 590);
  auto feature = rand_t({4, 2, 2}, 591);
  auto z = vit_forward(feature, p);
  auto z0 = patch_embed(feature, p);
  for (Index i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], z0[i]);
}

TEST(Vit, OutputShapeAtDefaults) {
  VitConfig cfg;
  Rng rng(600);
  auto p = VitParams<float>::init(cfg, 128, 16, rng);
  EXPECT_EQ(vit_forward(Tensorf::zeros({128, 4, 4}), p).shape(), (Shape{16, 64}));
}

TEST(Vit, PermutationEquivariance) {
  auto p = rand_vit(3, 4, 8, 1, 2, 610);
  auto feature = rand_t({3, 2, 2}, 611);
  auto z = vit_forward(feature, p);
  const std::vector<Index> perm{2, 0, 3, 1};
  Tensord pf({3, 2, 2});
  Tensord pos({4, 8});
  for (Index n = 0; n < 4; ++n) {
    const Index s = perm[static_cast<std::size_t>(n)];
    for (Index c = 0; c < 3; ++c) pf.mutable_data()[static_cast<std::size_t>(c * 4 + n)] = feature[c * 4 + s];
    for (Index d = 0; d < 8; ++d) pos.mutable_data()[static_cast<std::size_t>(n * 8 + d)] = p.pos_embed[s * 8 + d];
  }
  p.pos_embed = pos;
  auto zp = vit_forward(pf, p);
  for (Index n = 0; n < 4; ++n)
    for (Index d = 0; d < 8; ++d)
      EXPECT_NEAR(zp.at({n, d}), z.at({perm[static_cast<std::size_t>(n)], d}), 1e-12);
}

TEST(Vit, BlockGradient) {
  auto p = rand_vit(3, 4, 8, 1, 2, 620);
  auto x = rand_t({4, 8}, 621);
  auto probe = rand_t({4, 8}, 622);
  auto r = grad_check([&](const Tensord& t) { return sum(mul(transformer_block(t, p.layers[0], 2), probe)); }, x);
  EXPECT_LE(r.max_rel_err, 1e-4);
  std::vector<Tensord> params;
  p.visit("", [&](const std::string&, Tensord& t) { params.push_back(t); });
  auto feature = rand_t({3, 2, 2}, 623);
  auto rp = grad_check_params([&] { return sum(mul(vit_forward(feature, p), probe)); }, params);
  EXPECT_LE(rp.max_rel_err, 1e-4);
}

// Decoder and full model

TEST(Decoder, OutputShapeAndZeroHeads) {
  ModelConfig cfg;
  auto p = ModelParams<float>::init(cfg, 1);
  for (auto* h : {&p.decoder.bolus_head, &p.decoder.pharynx_head}) {
    h->kernel = Tensorf::zeros(h->kernel.shape());
    h->bias = Tensorf::zeros({1});
  }
  Rng rng(700);
  std::vector<Tensorf> frames;
  for (int i = 0; i < 5; ++i) frames.push_back(rand_uniform<float>({64, 64}, rng));
  auto out = model_forward(frames, p, cfg);
  EXPECT_EQ(out.bolus.shape(), (Shape{64, 64}));
  EXPECT_EQ(out.pharynx.shape(), (Shape{64, 64}));
  for (float v : out.bolus.data()) EXPECT_EQ(v, 0.5f);
  for (float v : out.pharynx.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Decoder, SkipMismatchThrows) {
  ModelConfig cfg = small_config(1);
  auto p = ModelParams<double>::init(cfg, 2);
  std::array<Tensord, 3> skips{Tensord::zeros({4, 16, 16}), Tensord::zeros({4, 8, 8}), Tensord::zeros({8, 2, 2})};
  EXPECT_THROW(decode(Tensord::zeros({4, 8}), skips, p.decoder), ShapeError);
}

TEST(Decoder, TransposedFinalStage) {
  ModelConfig cfg = small_config(1);
  cfg.decoder.final_upsample = FinalUpsample::Transposed;
  auto p = ModelParams<float>::init(cfg, 3);
  auto out = model_forward(std::vector<Tensorf>{Tensorf::full({32, 32}, 0.5f)}, p, cfg);
  EXPECT_EQ(out.bolus.shape(), (Shape{32, 32}));
  EXPECT_THROW(parse_final_upsample("nearest"), std::invalid_argument);
}

TEST(Decoder, GradientReachesEmbeddingAndEncoder) {
  ModelConfig cfg = small_config(1);
  cfg.height = cfg.width = 16;
  auto p = ModelParams<double>::init(cfg, 4);
  auto frame = rand_t({16, 16}, 710, 0, 1);
  Tape<double> tape;
  p.visit([](const std::string&, Tensord& t) { t.set_requires_grad(true); });
  Tensord loss;
  {
    TapeScope<double> scope(tape);
    loss = sum(model_forward(std::vector<Tensord>{frame}, p, cfg).bolus);
  }
  tape.backward(loss);
  auto nonzero = [](const Tensord& t) {
    for (double g : t.grad())
      if (g != 0) return true;
    return false;
  };
  EXPECT_TRUE(nonzero(p.vit.patch_proj));
  EXPECT_TRUE(nonzero(p.encoder.stages[0][0].conv1.kernel));
  GradCheckOptions opts;
  opts.max_entries = 6;
  auto r = grad_check_params([&] { return sum(model_forward(std::vector<Tensord>{frame}, p, cfg).bolus); },
                             {p.vit.patch_proj, p.encoder.stages[0][0].conv1.kernel}, opts);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(Model, SingleFrameConfigHasNoTemporalParameters) {
  auto p = ModelParams<float>::init(small_config(1), 5);
  EXPECT_FALSE(p.tcm.has_value());
  for (const auto& [name, t] : p.named_parameters()) EXPECT_EQ(name.rfind("tcm", 0), std::string::npos) << name;
  auto p5 = ModelParams<float>::init(small_config(5), 5);
  ASSERT_TRUE(p5.tcm.has_value());
  EXPECT_EQ(p5.tcm->slots(), 5);
}

TEST(Model, ZeroSecondGainReducesToSingleFrame) {
  auto c1 = small_config(1), c5 = small_config(5);
  auto p1 = ModelParams<float>::init(c1, 6);
  auto p5 = ModelParams<float>::init(c5, 6);
  Rng rng(720);
  std::vector<Tensorf> frames;
  for (int i = 0; i < 5; ++i) frames.push_back(rand_uniform<float>({32, 32}, rng));
  auto a = model_forward(frames, p5, c5);
  auto b = model_forward(std::vector<Tensorf>{frames[2]}, p1, c1);
  EXPECT_TRUE(bitwise_equal(a.bolus, b.bolus));
  EXPECT_TRUE(bitwise_equal(a.pharynx, b.pharynx));
}

TEST(Model, OutputsStrictlyInsideUnitInterval) {
  auto cfg = small_config(3);
  auto p = ModelParams<float>::init(cfg, 7);
  Rng rng(730);
  std::vector<Tensorf> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(rand_uniform<float>({32, 32}, rng));
  auto out = model_forward(frames, p, cfg);
  for (float v : out.bolus.data()) EXPECT_TRUE(v > 0.0f && v < 1.0f);
  for (float v : out.pharynx.data()) EXPECT_TRUE(v > 0.0f && v < 1.0f);
}

TEST(Model, OutputShapeFollowsInputSize) {
  for (Index s : {32, 48, 96}) {
    auto cfg = small_config(1);
    cfg.height = s;
    cfg.width = 32;
    auto p = ModelParams<float>::init(cfg, 8);
    auto out = model_forward(std::vector<Tensorf>{Tensorf::zeros({s, 32})}, p, cfg);
    EXPECT_EQ(out.bolus.shape(), (Shape{s, 32}));
  }
}

TEST(Model, LengthTransferByAdaptation) {
  auto cfg = small_config(3);
  auto p = ModelParams<float>::init(cfg, 9);
  Rng rng(740);
  std::vector<Tensorf> frames;
  for (int i = 0; i < 7; ++i) frames.push_back(rand_uniform<float>({32, 32}, rng));
  auto long_out = model_forward(frames, p, cfg);
  auto trimmed = model_forward(std::vector<Tensorf>{frames[2], frames[3], frames[4]}, p, cfg);
  EXPECT_TRUE(bitwise_equal(long_out.bolus, trimmed.bolus));
}

TEST(Model, CastToDoubleKeepsValues) {
  auto cfg = small_config(3);
  auto p = ModelParams<float>::init(cfg, 10);
  auto d = p.cast<double>(cfg);
  auto a = p.named_parameters();
  auto b = d.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(double(a[i].second[0]), b[i].second[0]);
}

TEST(Model, ForwardBackwardTimingAtDeskScale) {
  ModelConfig cfg;
  auto p = ModelParams<float>::init(cfg, 11);
  p.visit([](const std::string&, Tensorf& t) { t.set_requires_grad(true); });
  Rng rng(750);
  std::vector<Tensorf> frames;
  for (int i = 0; i < 5; ++i) frames.push_back(rand_uniform<float>({64, 64}, rng));
  const auto t0 = std::chrono::steady_clock::now();
  Tape<float> tape;
  Tensorf loss;
  {
    TapeScope<float> scope(tape);
    auto out = model_forward(frames, p, cfg);
    loss = add(sum(out.bolus), sum(out.pharynx));
  }
  tape.backward(loss);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 5.0);
}
