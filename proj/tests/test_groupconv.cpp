#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "equicaps/groupconv.hpp"
#include "equicaps/rng.hpp"
#include "equicaps/verifier.hpp"

using namespace equicaps;

namespace {

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t k, Rng& rng) {
  FeatureMap f(h, w, k);
  for (double& v : f.data()) v = rng.normal();
  return f;
}

CapsuleField pose_field(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  CapsuleField p(h, w, c);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t ch = 0; ch < c; ++ch) {
        p.pose(r, col, ch) = rng.rotation();
        p.activation(r, col, ch) = 1.0;
      }
  return p;
}

}  // namespace

TEST(Bilinear, WeightsAtQuarterPixel) {
  const SamplePoint sp = bilinear_point(4, 4, {1.0, 1.0}, {0.25, 0.5});
  ASSERT_EQ(sp.count, 4);
  double sum = 0.0;
  for (int t = 0; t < sp.count; ++t) sum += sp.taps[t].weight;
  EXPECT_DOUBLE_EQ(sum, 1.0);
  EXPECT_EQ(sp.taps[0].cell, 1u * 4 + 1);
  EXPECT_DOUBLE_EQ(sp.taps[0].weight, 0.75 * 0.5);
}

TEST(Bilinear, IntegerPointsHaveOneTapAndPaddingDropsTaps) {
  EXPECT_EQ(bilinear_point(4, 4, {2.0, 1.0}, {0.0, 0.0}).count, 1);
  EXPECT_EQ(bilinear_point(4, 4, {0.0, 0.0}, {-1.0, 0.0}).count, 0);
  EXPECT_EQ(bilinear_point(4, 4, {3.0, 3.0}, {0.5, 0.0}).count, 1);
}

TEST(GroupConv, DeltaKernelCopiesInputAtIdentityPose) {
  Rng rng(1);
  const FeatureMap f = random_map(6, 6, 2, rng);
  CapsuleField poses(6, 6, 1);
  const FeatureMap out = sparse_group_conv(f, poses, ContinuousKernel::delta(3, 2));
  EXPECT_EQ(out.data(), f.data());
}

TEST(GroupConv, RotatedKernelSamplesRotatedOffsets) {
  // A single tap at offset (+1, 0); a quarter-turn pose reads offset (0, +1).
  FeatureMap f(3, 3, 1);
  f.at(2, 1, 0) = 7.0;
  ContinuousKernel k = ContinuousKernel::square(3, 1, 1);
  k.tap(5, 0, 0) = 1.0;  // offsets are row-major; index 5 is (x=+1, y=0)
  CapsuleField poses(3, 3, 1);
  poses.pose(1, 1, 0) = Rot2::quarter_turn(1);
  EXPECT_EQ(sparse_group_conv(f, poses, k).at(1, 1, 0), 7.0);
  poses.pose(1, 1, 0) = Rot2{};
  EXPECT_EQ(sparse_group_conv(f, poses, k).at(1, 1, 0), 0.0);
}

TEST(GroupConv, ZeroTapsGiveZeroOutput) {
  Rng rng(2);
  const FeatureMap f = random_map(4, 4, 2, rng);
  const FeatureMap out = sparse_group_conv(f, pose_field(2, 2, 1, rng), ContinuousKernel::square(3, 2, 3));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(GroupConv, ConstantSignalIsPoseIndependentAwayFromBorders) {
  Rng rng(3);
  FeatureMap f(9, 9, 1, 2.0);
  ContinuousKernel k = ContinuousKernel::square(3, 1, 1);
  for (double& t : k.taps) t = rng.normal();
  double taps = 0.0;
  for (double t : k.taps) taps += t;
  const FeatureMap out = sparse_group_conv(f, pose_field(9, 9, 1, rng), k);
  EXPECT_NEAR(out.at(4, 4, 0), 2.0 * taps, 1e-12);
}

TEST(GroupConv, ShapeErrors) {
  Rng rng(4);
  const FeatureMap f = random_map(4, 4, 2, rng);
  EXPECT_THROW(sparse_group_conv(f, pose_field(3, 3, 1, rng), ContinuousKernel::square(3, 2, 1)), ShapeError);
  EXPECT_THROW(sparse_group_conv(f, pose_field(2, 2, 1, rng), ContinuousKernel::square(3, 1, 1)), ShapeError);
  EXPECT_THROW(ContinuousKernel::square(2, 1, 1), std::invalid_argument);
}

TEST(GroupConv, ModulateAndPool) {
  FeatureMap f(2, 2, 2, 1.0);
  CapsuleField a(2, 2, 1);
  a.activation(0, 0, 0) = 0.5;
  const FeatureMap m = modulate(f, a);
  EXPECT_EQ(m.at(0, 0, 1), 0.5);
  EXPECT_EQ(m.at(1, 1, 0), 0.0);

  FeatureMap g(2, 2, 1);
  g.at(0, 0, 0) = 1.0;
  g.at(1, 1, 0) = 3.0;
  const std::vector<double> w = {1.0, 0.0, 0.0, 1.0};
  EXPECT_DOUBLE_EQ(pool_by_agreement(g, BlockGeometry::two_by_two(), w).at(0, 0, 0), 2.0);
  const std::vector<double> neg = {-1.0, 0.0, 0.0, 1.0};
  EXPECT_THROW(pool_by_agreement(g, BlockGeometry::two_by_two(), neg), std::invalid_argument);
}

TEST(GroupConv, InvarianceSuiteSmall) {
  const EquivarianceReport r = verify_groupconv(9, 60, 1e-9);
  EXPECT_TRUE(r.passed) << r.max_feature_dev << " " << r.max_shift_dev;
  EXPECT_EQ(r.max_shift_dev, 0.0);
}
