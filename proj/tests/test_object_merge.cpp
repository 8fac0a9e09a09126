#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "adatok/object_merge.hpp"
#include "oracles.hpp"

using namespace adatok;

namespace {

FeatureGrid grid(std::size_t h, std::size_t w, std::size_t d, std::vector<float> values) {
  FeatureGrid fg;
  fg.grid_height = h;
  fg.grid_width = w;
  fg.dim = d;
  fg.values = std::move(values);
  return fg;
}

ObjectMask mask_from(std::vector<std::uint8_t> bits, std::int64_t src) {
  ObjectMask m;
  m.bitmap = std::move(bits);
  m.confidence = 1.0;
  m.source_index = src;
  return m;
}

}  // namespace

TEST(Upsample, SinglePatchIsConstant) {
  const auto fg = grid(1, 1, 3, {1.5f, -2.0f, 0.25f});
  for (auto mode : {UpsampleMode::nearest, UpsampleMode::bilinear}) {
    const auto field = upsample_features(fg, 8, 8, mode);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const auto v = field.at(y, x);
        EXPECT_EQ(std::vector<float>(v.begin(), v.end()), fg.values);
      }
  }
}

TEST(Upsample, NearestReplicatesQuadrants) {
  const auto fg = grid(2, 2, 1, {1, 2, 3, 4});
  const auto field = upsample_features(fg, 4, 4, UpsampleMode::nearest);
  const std::vector<float> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(field.values, want);
}

TEST(Upsample, BilinearMatchesScalarReference) {
  const auto fg = grid(2, 2, 1, {0, 1, 2, 3});
  const auto field = upsample_features(fg, 4, 4, UpsampleMode::bilinear);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      EXPECT_NEAR(field.at(y, x)[0], oracle::bilinear_sample(fg, 0, y, x, 4, 4), 1e-7);
  // Centre pixels sit strictly between their neighbours.
  EXPECT_FLOAT_EQ(field.at(1, 1)[0], 0.75f);
  EXPECT_GT(field.at(1, 2)[0], field.at(1, 1)[0]);
  EXPECT_GT(field.at(2, 1)[0], field.at(1, 1)[0]);
  EXPECT_LT(field.at(2, 2)[0], 3.0f);
  // Corners clamp to the patch values.
  EXPECT_FLOAT_EQ(field.at(0, 0)[0], 0.0f);
  EXPECT_FLOAT_EQ(field.at(3, 3)[0], 3.0f);
}

TEST(Upsample, BelowGridResolutionRejected) {
  const auto fg = grid(4, 4, 1, std::vector<float>(16, 0.0f));
  EXPECT_THROW(upsample_features(fg, 3, 8, UpsampleMode::nearest), InvalidArgument);
}

TEST(Merge, UniformFieldGivesUniformTokens) {
  const auto fg = grid(3, 3, 2, [] {
    std::vector<float> v;
    for (int i = 0; i < 9; ++i) v.insert(v.end(), {0.5f, -1.25f});
    return v;
  }());
  std::mt19937 rng(1);
  MaskSet ms{12, 12, {}};
  for (int i = 0; i < 4; ++i) {
    std::vector<std::uint8_t> bits(144);
    for (auto& b : bits) b = rng() % 2;
    bits[static_cast<std::size_t>(i)] = 1;
    ms.masks.push_back(mask_from(bits, i));
  }
  for (auto mode : {UpsampleMode::nearest, UpsampleMode::bilinear}) {
    const auto cts = merge(fg, ms, {mode, false, 1});
    ASSERT_EQ(cts.count(), 4u);
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_FLOAT_EQ(cts.token(t)[0], 0.5f);
      EXPECT_FLOAT_EQ(cts.token(t)[1], -1.25f);
    }
  }
}

TEST(Merge, LeftColumnOfTwoByTwo) {
  const auto fg = grid(2, 2, 1, {1, 2, 3, 4});
  MaskSet ms{2, 2, {mask_from({1, 0, 1, 0}, 0)}};
  const auto cts = merge(fg, ms);
  ASSERT_EQ(cts.count(), 1u);
  EXPECT_FLOAT_EQ(cts.token(0)[0], 2.0f);
  EXPECT_EQ(cts.meta[0], (TokenMeta{0, 2}));
}

TEST(Merge, PartitionReproducesGlobalMean) {
  std::mt19937 rng(2);
  for (int iter = 0; iter < 50; ++iter) {
    auto inst = oracle::random_instance(rng);
    auto& ms = inst.masks;
    // Replace the masks with a two-way random partition.
    std::vector<std::uint8_t> a(ms.image_height * ms.image_width);
    for (auto& b : a) b = rng() % 2;
    a[0] = 1;
    std::vector<std::uint8_t> b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = !a[i];
    ms.masks.clear();
    ms.masks.push_back(mask_from(a, 0));
    if (std::count(b.begin(), b.end(), 1) > 0) ms.masks.push_back(mask_from(b, 1));

    const auto cts = merge(inst.features, ms);
    const auto global = oracle::brute_force_merge(inst.features, MaskSet{ms.image_height, ms.image_width,
                                                                         {mask_from(std::vector<std::uint8_t>(a.size(), 1), 0)}},
                                                  UpsampleMode::nearest, false)[0];
    const double pixels = static_cast<double>(a.size());
    for (std::size_t c = 0; c < cts.dim; ++c) {
      double weighted = 0.0;
      for (std::size_t t = 0; t < cts.count(); ++t)
        weighted += cts.token(t)[c] * static_cast<double>(cts.meta[t].mask_area_pixels) / pixels;
      ASSERT_NEAR(weighted, global[c], 1e-6 * std::max(1.0, std::fabs(global[c])));
    }
  }
}

TEST(Merge, ErrorsOnEmptyMaskAndShape) {
  const auto fg = grid(2, 2, 1, {1, 2, 3, 4});
  EXPECT_THROW(merge(fg, MaskSet{2, 2, {mask_from({0, 0, 0, 0}, 0)}}), EmptyMaskError);
  EXPECT_THROW(merge(fg, MaskSet{2, 2, {mask_from({1, 0, 0}, 0)}}), ShapeError);
  EXPECT_THROW(merge(fg, MaskSet{1, 4, {mask_from({1, 0, 0, 0}, 0)}}), InvalidArgument);
}

TEST(Merge, ResidualToken) {
  const auto fg = grid(2, 2, 1, {1, 2, 3, 4});
  MaskSet ms{2, 2, {mask_from({1, 0, 0, 0}, 4)}};
  const auto off = merge(fg, ms);
  EXPECT_EQ(off.count(), 1u);
  EXPECT_FALSE(off.residual_included);
  const auto on = merge(fg, ms, {UpsampleMode::nearest, true, 1});
  ASSERT_EQ(on.count(), 2u);
  EXPECT_TRUE(on.residual_included);
  EXPECT_FLOAT_EQ(on.token(1)[0], 3.0f);  // (2 + 3 + 4) / 3
  EXPECT_EQ(on.meta[1], (TokenMeta{kResidualSource, 3}));
  // Full coverage: the flag adds nothing.
  MaskSet full{2, 2, {mask_from({1, 1, 0, 0}, 0), mask_from({0, 0, 1, 1}, 1)}};
  const auto cov = merge_fast(fg, full, {UpsampleMode::nearest, true, 1});
  EXPECT_EQ(cov.count(), 2u);
  EXPECT_FALSE(cov.residual_included);
}

TEST(Merge, MatchesBruteForceBothModes) {
  std::mt19937 rng(42);
  for (int iter = 0; iter < 200; ++iter) {
    const auto inst = oracle::random_instance(rng);
    for (auto mode : {UpsampleMode::nearest, UpsampleMode::bilinear}) {
      const bool residual = iter % 3 == 0;
      const auto cts = merge(inst.features, inst.masks, {mode, residual, 1});
      const auto want = oracle::brute_force_merge(inst.features, inst.masks, mode, residual);
      ASSERT_EQ(cts.count(), want.size());
      ASSERT_LE(oracle::normwise_relative_error(cts, want), 1e-6) << iter;
    }
  }
}

TEST(MergeFast, MatchesMergeAndRejectsBilinear) {
  std::mt19937 rng(43);
  for (int iter = 0; iter < 300; ++iter) {
    const auto inst = oracle::random_instance(rng);
    const MergeOptions opts{UpsampleMode::nearest, iter % 2 == 0, 1};
    const auto slow = merge(inst.features, inst.masks, opts);
    const auto fast = merge_fast(inst.features, inst.masks, opts);
    ASSERT_EQ(fast.meta, slow.meta);
    ASSERT_LE(oracle::normwise_relative_error(fast, slow), 1e-6);
  }
  const auto fg = grid(1, 1, 1, {1});
  EXPECT_THROW(merge_fast(fg, MaskSet{1, 1, {mask_from({1}, 0)}}, {UpsampleMode::bilinear, false, 1}),
               UnsupportedMode);
}

TEST(MergeFast, PatchAlignedMaskReturnsPatchVector) {
  std::vector<float> v(4 * 4 * 2);
  std::iota(v.begin(), v.end(), 0.0f);
  const auto fg = grid(4, 4, 2, v);
  std::vector<std::uint8_t> bits(16 * 16, 0);
  for (std::size_t y = 8; y < 12; ++y)
    for (std::size_t x = 4; x < 8; ++x) bits[y * 16 + x] = 1;  // patch (2, 1)
  const auto cts = merge_fast(fg, MaskSet{16, 16, {mask_from(bits, 0)}});
  EXPECT_EQ(cts.token(0)[0], fg.patch(9)[0]);
  EXPECT_EQ(cts.token(0)[1], fg.patch(9)[1]);
}

TEST(Merge, ConvexHullBound) {
  std::mt19937 rng(44);
  for (int iter = 0; iter < 200; ++iter) {
    const auto inst = oracle::random_instance(rng);
    const auto mode = iter % 2 ? UpsampleMode::bilinear : UpsampleMode::nearest;
    const auto field = upsample_features(inst.features, inst.masks.image_height, inst.masks.image_width, mode);
    const auto cts = merge(inst.features, inst.masks, {mode, true, 1});
    for (std::size_t c = 0; c < cts.dim; ++c) {
      float lo = field.values[c], hi = field.values[c];
      for (std::size_t p = 0; p < field.height * field.width; ++p) {
        lo = std::min(lo, field.values[p * cts.dim + c]);
        hi = std::max(hi, field.values[p * cts.dim + c]);
      }
      for (std::size_t t = 0; t < cts.count(); ++t) {
        ASSERT_GE(cts.token(t)[c], lo);
        ASSERT_LE(cts.token(t)[c], hi);
      }
    }
  }
}

TEST(Merge, PermutationEquivariant) {
  std::mt19937 rng(45);
  for (int iter = 0; iter < 100; ++iter) {
    const auto inst = oracle::random_instance(rng);
    std::vector<std::size_t> perm(inst.masks.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    MaskSet shuffled{inst.masks.image_height, inst.masks.image_width, {}};
    for (auto i : perm) shuffled.masks.push_back(inst.masks.masks[i]);
    const auto a = merge(inst.features, inst.masks);
    const auto b = merge(inst.features, shuffled);
    for (std::size_t j = 0; j < perm.size(); ++j) {
      const auto ta = a.token(perm[j]);
      const auto tb = b.token(j);
      ASSERT_TRUE(std::equal(ta.begin(), ta.end(), tb.begin()));
      ASSERT_EQ(a.meta[perm[j]], b.meta[j]);
    }
  }
}

TEST(Merge, ThreadCountDoesNotChangeResult) {
  std::mt19937 rng(46);
  for (int iter = 0; iter < 30; ++iter) {
    const auto inst = oracle::random_instance(rng);
    const auto one = merge(inst.features, inst.masks, {UpsampleMode::nearest, true, 1});
    const auto many = merge(inst.features, inst.masks, {UpsampleMode::nearest, true, 4});
    const auto fast = merge_fast(inst.features, inst.masks, {UpsampleMode::nearest, true, 3});
    ASSERT_EQ(one, many);
    ASSERT_EQ(fast, merge_fast(inst.features, inst.masks, {UpsampleMode::nearest, true, 1}));
  }
}

TEST(Merge, TokenCountFollowsMasks) {
  std::mt19937 rng(47);
  for (int iter = 0; iter < 100; ++iter) {
    const auto inst = oracle::random_instance(rng);
    EXPECT_EQ(merge_fast(inst.features, inst.masks).count(), inst.masks.size());
  }
}

TEST(CompressionRatio, Values) {
  CompressedTokenSet cts;
  cts.origin = {336, 336, 24, 24};
  cts.meta.resize(53);
  EXPECT_NEAR(compression_ratio(cts), 0.0920, 5e-5);
  cts.meta.resize(576);
  EXPECT_DOUBLE_EQ(compression_ratio(cts), 1.0);
  cts.meta.resize(15);
  EXPECT_NEAR(compression_ratio(cts), 0.026, 5e-4);  // "2.6%"
  cts.origin = {};
  EXPECT_THROW(compression_ratio(cts), InvalidArgument);
}
