#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "equicaps/aggregation.hpp"
#include "equicaps/verifier.hpp"

using namespace equicaps;

namespace {

ReceptiveField block(const std::vector<Rot2>& poses, const std::vector<double>& acts) {
  CapsuleField f(2, 2, 1);
  for (std::size_t k = 0; k < 4; ++k) {
    f.pose(k / 2, k % 2, 0) = poses[k];
    f.activation(k / 2, k % 2, 0) = acts[k];
  }
  return extract_block(f, BlockGeometry::two_by_two(), 0, 0);
}

}  // namespace

TEST(Aggregation, ExtractBlockPositionsAreCentered) {
  const ReceptiveField rf = block({Rot2{}, Rot2{}, Rot2{}, Rot2{}}, {1, 1, 1, 1});
  ASSERT_EQ(rf.size(), 4u);
  EXPECT_EQ(rf.positions[0], (Vec2{-0.5, -0.5}));
  EXPECT_EQ(rf.positions[3], (Vec2{0.5, 0.5}));
}

TEST(Aggregation, OutOfGridCellsAreInactive) {
  CapsuleField f(3, 3, 1);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) f.activation(r, c, 0) = 1.0;
  const BlockGeometry g = BlockGeometry::two_by_two();
  EXPECT_THROW(g.output_extent(3), std::invalid_argument);
  const ReceptiveField rf = extract_block(f, BlockGeometry::three_by_three(), 0, 0);
  // Top-left corner of a centered 3x3 block hangs over the border.
  EXPECT_EQ(rf.capsules[0].activations[0], 0.0);
  EXPECT_EQ(rf.capsules[4].activations[0], 1.0);
}

TEST(Aggregation, MeanPoseUsesUnitWeightsWhenAllActive) {
  const ReceptiveField rf =
      block({Rot2{}, Rot2{}, Rot2{}, Rot2::quarter_turn(1)}, {1.0, 1.0, 1.0, 1e-6});
  const Rot2 m = mean_pose(rf);
  EXPECT_NEAR(m.c(), 3.0 / std::sqrt(10.0), 1e-15);
  EXPECT_NEAR(m.s(), 1.0 / std::sqrt(10.0), 1e-15);
}

TEST(Aggregation, MeanPoseIgnoresInactiveCapsules) {
  const ReceptiveField rf =
      block({Rot2{}, Rot2::quarter_turn(1), Rot2::quarter_turn(2), Rot2{}}, {0.5, 0.5, 0.0, 0.0});
  const Rot2 m = mean_pose(rf);
  EXPECT_NEAR(m.angle(), std::atan2(1.0, 1.0), 1e-15);
}

TEST(Aggregation, DeadAndDegenerateBlocks) {
  const ReceptiveField dead = block({Rot2{}, Rot2{}, Rot2{}, Rot2{}}, {0, 0, 0, 0});
  EXPECT_THROW(mean_pose(dead), DeadField);
  Rng rng(1);
  const KernelMLP mlp = KernelMLP::random(1, 2, 4, rng);
  const CapsuleOutput<Rot2> out = aggregate_block(dead, mlp, RoutingConfig{});
  EXPECT_EQ(out.activations, (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(out.flags[0] & capsule_flags::kDead);

  const ReceptiveField cancel =
      block({Rot2{}, Rot2::quarter_turn(2), Rot2::quarter_turn(1), Rot2::quarter_turn(3)}, {1, 1, 1, 1});
  EXPECT_THROW(mean_pose(cancel), DegenerateMean);
  EXPECT_TRUE(aggregate_block(cancel, mlp, RoutingConfig{}).flags[0] & capsule_flags::kDegenerate);
}

TEST(Aggregation, AlignedPositionsUndoTheMeanPose) {
  const Rot2 r = Rot2::from_angle(0.9);
  const ReceptiveField rf = block({r, r, r, r}, {1, 1, 1, 1});
  const std::vector<Vec2> raw = aligned_positions(rf, false);
  const std::vector<Vec2> al = aligned_positions(rf, true);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    EXPECT_NEAR(std::hypot(raw[i].x, raw[i].y), 1.0, 1e-15);
    const Vec2 back = act_on_point(r, al[i]);
    EXPECT_NEAR(back.x, raw[i].x, 1e-15);
    EXPECT_NEAR(back.y, raw[i].y, 1e-15);
  }
}

TEST(Aggregation, ConstantKernelReturnsItsPairs) {
  const std::vector<Rot2> pairs = {Rot2::from_angle(0.3), Rot2::from_angle(-1.2)};
  const KernelMLP mlp = KernelMLP::constant(1, 2, 4, pairs);
  const std::vector<Rot2> t = mlp.evaluate({0.4, -0.9});
  EXPECT_LT(pose_deviation(t[0], pairs[0]), 1e-15);
  EXPECT_LT(pose_deviation(t[1], pairs[1]), 1e-15);
  EXPECT_THROW(KernelMLP::constant(1, 2, 4, std::vector<Rot2>(3)), std::invalid_argument);
}

TEST(Aggregation, ZeroKernelOutputIsDegenerateTransform) {
  const KernelMLP mlp(1, 1, 4);
  EXPECT_THROW(mlp.evaluate({0.0, 0.0}), DegenerateTransform);
}

TEST(Aggregation, ChannelMismatchIsShapeError) {
  Rng rng(2);
  const KernelMLP mlp = KernelMLP::random(2, 1, 4, rng);
  const ReceptiveField rf = block({Rot2{}, Rot2{}, Rot2{}, Rot2{}}, {1, 1, 1, 1});
  EXPECT_THROW(align_and_generate(rf, mlp), ShapeError);
}

TEST(Aggregation, FieldOutputShape) {
  CapsuleField f(8, 8, 2);
  Rng rng(4);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t ch = 0; ch < 2; ++ch) {
        f.pose(r, c, ch) = rng.rotation();
        f.activation(r, c, ch) = rng.uniform();
      }
  const KernelMLP mlp = KernelMLP::random(2, 3, 8, rng);
  const FieldAggregation agg = aggregate_field(f, mlp, RoutingConfig{}, BlockGeometry::two_by_two());
  EXPECT_EQ(agg.output.height(), 4u);
  EXPECT_EQ(agg.output.width(), 4u);
  EXPECT_EQ(agg.output.channels(), 3u);
  EXPECT_EQ(agg.blocks.size(), 16u);
}

TEST(Aggregation, AlignedKernelsAreEquivariant) {
  const EquivarianceReport r = verify_aggregation(5, 200, 1e-9, {true, false, true});
  EXPECT_TRUE(r.passed) << r.max_pose_dev << " " << r.max_act_dev;
}

TEST(Aggregation, UnalignedKernelsMismatch) {
  const EquivarianceReport r = verify_aggregation(5, 200, 1e-9, {false, false, true});
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_pose_dev, 0.1);
  EXPECT_TRUE(r.as_expected());
}

TEST(Aggregation, ConstantKernelsNeedNoAlignment) {
  const EquivarianceReport r = verify_aggregation(5, 200, 1e-9, {false, true, true});
  EXPECT_TRUE(r.passed) << r.max_pose_dev;
}
