#include <gtest/gtest.h>

#include <cmath>

#include "spkmoco/augment.hpp"
#include "spkmoco/errors.hpp"
#include "test_util.hpp"

using namespace spkmoco;
using spkmoco::testing::random_features;

namespace {

AugmentPolicy small_policy() {
  AugmentPolicy p;
  p.crop_min = 40;
  p.crop_max = 60;
  p.warp_window = 5;
  p.max_time_mask = 8;
  p.max_freq_mask = 3;
  return p;
}

}  // namespace

TEST(Policy, Validation) {
  AugmentPolicy p;
  EXPECT_NO_THROW(p.validate());
  p.crop_min = 35;  // 2*10 + 15
  EXPECT_THROW(p.validate(), ParameterError);
  p.crop_min = 500;
  EXPECT_THROW(p.validate(), ParameterError);
}

TEST(Crop, ForcedWholeUtterance) {
  Rng rng(1);
  const auto u = random_features(50, 4, rng);
  AugmentPolicy p = small_policy();
  p.crop_min = p.crop_max = 50;
  const auto pair = random_crop_pair(u, p, rng);
  ASSERT_TRUE(pair);
  EXPECT_EQ(pair->a.frames, u.frames);
  EXPECT_EQ(pair->b.frames, u.frames);
}

TEST(Crop, SeededPairIsReplayable) {
  Rng data(2);
  const auto u = random_features(400, 3, data);
  AugmentPolicy p;
  p.crop_min = 200;
  p.crop_max = 300;
  Rng r1(99), r2(99);
  const auto a = random_crop_pair(u, p, r1), b = random_crop_pair(u, p, r2);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->start_a, b->start_a);
  EXPECT_EQ(a->start_b, b->start_b);
  EXPECT_EQ(a->a.frames, b->a.frames);
  EXPECT_EQ(a->b.frames, b->b.frames);
  for (const auto* s : {&a->a, &a->b}) {
    EXPECT_GE(s->num_frames(), 200u);
    EXPECT_LE(s->num_frames(), 300u);
  }
}

TEST(Crop, TooShortSignalsSkip) {
  Rng rng(3);
  EXPECT_FALSE(random_crop_pair(random_features(39, 2, rng), small_policy(), rng).has_value());
}

TEST(Crop, StartsAreUniform) {
  Rng rng(4);
  const auto u = random_features(400, 1, rng);
  std::vector<double> counts(201, 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    std::size_t s = 0;
    random_crop(u, 200, rng, &s);
    ASSERT_LE(s, 200u);
    counts[s] += 1;
  }
  double chi2 = 0;
  const double expect = n / 201.0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // 200 degrees of freedom; 0.999 quantile is about 267.
  EXPECT_LT(chi2, 267.0);
}

TEST(Warp, ZeroWindowAndZeroShiftAreIdentity) {
  Rng rng(5);
  const auto s = random_features(30, 3, rng);
  EXPECT_EQ(time_warp(s, 0, rng).frames, s.frames);
  EXPECT_EQ(time_warp_at(s, 12, 0).frames, s.frames);
}

TEST(Warp, ConstantIsFixedPoint) {
  FeatureMatrix s(40, 2);
  for (std::size_t t = 0; t < 40; ++t) {
    s.at(t, 0) = 0.3;
    s.at(t, 1) = -1.7;
  }
  Rng rng(6);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(time_warp(s, 10, rng).frames, s.frames);
}

TEST(Warp, PiecewiseLinearRemap) {
  FeatureMatrix ramp(21, 1);
  for (std::size_t t = 0; t < 21; ++t) ramp.at(t, 0) = double(t);
  // Anchor 10 -> 15: left piece t -> t*10/15, right piece compresses 15..20 onto 10..20.
  const auto w = time_warp_at(ramp, 10, 5);
  EXPECT_EQ(w.num_frames(), 21u);
  EXPECT_EQ(w.at(0, 0), 0.0);
  EXPECT_EQ(w.at(20, 0), 20.0);
  EXPECT_NEAR(w.at(15, 0), 10.0, 1e-12);
  EXPECT_NEAR(w.at(6, 0), 4.0, 1e-12);
  EXPECT_NEAR(w.at(18, 0), 16.0, 1e-12);
}

TEST(Warp, NeedsLongerSegment) {
  Rng rng(7);
  EXPECT_THROW(time_warp(random_features(20, 2, rng), 10, rng), ParameterError);
}

TEST(Mask, ZeroWidthIsIdentity) {
  Rng rng(8);
  auto s = random_features(30, 5, rng);
  const auto orig = s;
  apply_mask(s, MaskAxis::time, 0, rng);
  apply_mask(s, MaskAxis::freq, 0, rng);
  EXPECT_EQ(s.frames, orig.frames);
}

TEST(Mask, FullFrequencyExtentGivesColumnMeans) {
  Rng rng(9);
  auto s = random_features(12, 4, rng);
  std::vector<double> mean(4, 0.0);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t j = 0; j < 4; ++j) mean[j] += s.at(t, j) / 12;
  fill_mask(s, {MaskAxis::freq, 0, 4});
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(s.at(t, j), mean[j], 1e-14);
}

TEST(Mask, WidthBeyondExtentThrows) {
  Rng rng(10);
  auto s = random_features(12, 4, rng);
  EXPECT_THROW(apply_mask(s, MaskAxis::freq, 5, rng), ParameterError);
}

TEST(Mask, ExpectedMaskedCellCount) {
  Rng rng(11);
  const std::size_t t_count = 30, d = 12, max_w = 10;
  const auto base = random_features(t_count, d, rng);
  for (MaskAxis axis : {MaskAxis::time, MaskAxis::freq}) {
    const std::size_t other = axis == MaskAxis::time ? d : t_count;
    const int n = 10000;
    double total = 0;
    for (int i = 0; i < n; ++i) {
      auto s = base;
      apply_mask(s, axis, max_w, rng);
      for (std::size_t k = 0; k < s.frames.size(); ++k) total += s.frames[k] != base.frames[k];
    }
    const double expect = max_w / 2.0 * other;
    const double sd = std::sqrt(((max_w + 1.0) * (max_w + 1.0) - 1) / 12.0) * other / std::sqrt(double(n));
    EXPECT_NEAR(total / n, expect, 4 * sd);
  }
}

TEST(Mask, UnmaskedCellsBitIdentical) {
  Rng rng(12);
  const auto base = random_features(25, 6, rng);
  for (int i = 0; i < 200; ++i) {
    auto s = base;
    const auto r = apply_mask(s, i % 2 ? MaskAxis::time : MaskAxis::freq, 5, rng);
    for (std::size_t t = 0; t < 25; ++t)
      for (std::size_t j = 0; j < 6; ++j) {
        const std::size_t pos = r.axis == MaskAxis::time ? t : j;
        if (pos < r.start || pos >= r.start + r.width) {
          ASSERT_EQ(s.at(t, j), base.at(t, j));
        }
      }
  }
}

TEST(SpecAugment, PreservesShapeAndReplays) {
  Rng data(13);
  const auto seg = random_features(50, 8, data);
  const AugmentPolicy p = small_policy();
  Rng r1(5), r2(5);
  const auto a = spec_augment(seg, p, r1), b = spec_augment(seg, p, r2);
  EXPECT_EQ(a.num_frames(), 50u);
  EXPECT_EQ(a.dim, 8u);
  EXPECT_EQ(a.frames, b.frames);
}

TEST(SpecAugment, ViewsHavePrescribedLengths) {
  Rng rng(14);
  const auto u = random_features(100, 5, rng);
  const auto [a, b] = make_views(u, 45, 58, small_policy(), rng);
  EXPECT_EQ(a.num_frames(), 45u);
  EXPECT_EQ(b.num_frames(), 58u);
  EXPECT_EQ(a.dim, 5u);
}
