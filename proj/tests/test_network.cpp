#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "equicaps/glyphs.hpp"
#include "equicaps/network.hpp"
#include "equicaps/rng.hpp"
#include "equicaps/verifier.hpp"

using namespace equicaps;

namespace {

ImageGrid vertical_step(std::size_t n) {
  ImageGrid img(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = n / 2; c < n; ++c) img.at(r, c) = 1.0;
  return img;
}

}  // namespace

TEST(InitPoses, UniformImageIsDead) {
  const CapsuleField f = init_poses(ImageGrid(8, 8, 0.0));
  for (double a : f.activations()) EXPECT_EQ(a, 0.0);
  for (const Rot2& p : f.poses()) EXPECT_EQ(p, Rot2{});
}

TEST(InitPoses, VerticalStepEdge) {
  // Rows 0 and 7 see the zero padding; the interior rows see only the step.
  const CapsuleField f = init_poses(vertical_step(8));
  for (std::size_t r = 1; r < 7; ++r) {
    for (std::size_t c : {3u, 4u}) {
      EXPECT_EQ(f.pose(r, c, 0), Rot2{}) << r << "," << c;
      EXPECT_GT(f.activation(r, c, 0), 0.0);
      EXPECT_EQ(f.activation(r, c, 0), f.activation(1, 3, 0));
    }
    for (std::size_t c : {1u, 2u, 5u}) EXPECT_EQ(f.activation(r, c, 0), 0.0);
  }
}

TEST(InitPoses, QuarterTurnIsExact) {
  const auto data = make_glyph_dataset(12, 6, 16, 3);
  for (const auto& s : data) {
    const CapsuleField base = init_poses(s.image);
    for (int k = 1; k < 4; ++k) {
      const CapsuleField moved = init_poses(rotate_quarter(s.image, k));
      const CapsuleField expect = rotate_quarter(base, k);
      EXPECT_EQ(moved.activations(), expect.activations());
      // Dead capsules hold the identity placeholder, which does not rotate.
      for (std::size_t i = 0; i < moved.poses().size(); ++i) {
        if (moved.activations()[i] > 0.0) {
          EXPECT_EQ(moved.poses()[i], expect.poses()[i]) << i;
        } else {
          EXPECT_EQ(moved.poses()[i], Rot2{}) << i;
        }
      }
    }
  }
}

TEST(InitPoses, ContrastScaleKeepsPoses) {
  const ImageGrid img = make_glyph_dataset(1, 4, 16, 9)[0].image;
  ImageGrid half = img;
  for (double& p : half.pixels()) p *= 0.5;
  const CapsuleField a = init_poses(img);
  const CapsuleField b = init_poses(half);
  for (std::size_t i = 0; i < a.poses().size(); ++i) {
    EXPECT_LT(pose_deviation(a.poses()[i], b.poses()[i]), 1e-15);
    EXPECT_NEAR(a.activations()[i], b.activations()[i], 1e-15);
  }
}

TEST(Losses, SpreadLossOracles) {
  const std::vector<double> one_hot = {1.0, 0.0, 0.0};
  EXPECT_EQ(spread_loss(one_hot, 0, 0.5), 0.0);
  const std::vector<double> tie = {0.6, 0.6};
  EXPECT_DOUBLE_EQ(spread_loss(tie, 0, 0.5), 0.25);
  const std::vector<double> equal = {0.3, 0.3, 0.3, 0.3};
  EXPECT_NEAR(spread_loss(equal, 2, 0.2), 0.12, 1e-15);
  EXPECT_THROW(spread_loss(equal, 4, 0.2), std::invalid_argument);
}

TEST(Losses, CrossEntropyAndSoftmax) {
  const std::vector<double> flat = {2.0, 2.0, 2.0};
  EXPECT_NEAR(cross_entropy(flat, 1), std::log(3.0), 1e-15);
  const std::vector<double> p = softmax(std::vector<double>{0.0, std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  EXPECT_THROW(cross_entropy(flat, 3), std::invalid_argument);
}

TEST(Predict, TiesGoToLowestIndex) {
  ForwardResult r;
  r.capsule_activations = {0.5, 0.5, 0.5};
  r.conv_logits = {0.0, 0.0, 0.0};
  EXPECT_EQ(predict(r), 0u);
  r.conv_logits = {0.0, 1.0, 1.0};
  EXPECT_EQ(predict(r), 1u);
}

TEST(Network, ConfigValidation) {
  NetworkConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.classes = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_NO_THROW(NetworkConfig::with_classes(3).validate());
  EXPECT_DOUBLE_EQ(NetworkConfig{}.margin_at(0), 0.2);
  EXPECT_DOUBLE_EQ(NetworkConfig{}.margin_at(19), 0.9);
}

TEST(Network, ForwardShapesAndRanges) {
  const TrainState st = TrainState::random(NetworkConfig{}, 1);
  const ForwardResult r = forward(st, make_glyph_dataset(1, 4, 16, 2)[0].image);
  ASSERT_EQ(r.capsule_activations.size(), 4u);
  ASSERT_EQ(r.conv_logits.size(), 4u);
  ASSERT_EQ(r.final_poses.size(), 4u);
  for (double a : r.capsule_activations) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
  EXPECT_THROW(forward(st, ImageGrid(12, 12)), ShapeError);
}

TEST(Network, ZeroImageGivesZeroActivations) {
  const TrainState st = TrainState::random(NetworkConfig{}, 1);
  const ForwardResult r = forward(st, ImageGrid(16, 16));
  for (double a : r.capsule_activations) EXPECT_EQ(a, 0.0);
}

TEST(Network, InitializedStateScoresClassesEqually) {
  const TrainState st = TrainState::initialize(NetworkConfig{}, 7);
  const ForwardResult r = forward(st, make_glyph_dataset(1, 4, 16, 2)[0].image);
  for (std::size_t j = 1; j < 4; ++j) {
    EXPECT_EQ(r.capsule_activations[j], r.capsule_activations[0]);
    EXPECT_EQ(r.conv_logits[j], 0.0);
  }
}

TEST(Network, QuarterTurnEquivarianceSmall) {
  const EquivarianceReport r = verify_network(13, 3, 6, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_pose_dev << " " << r.max_act_dev;
}

TEST(Network, TraceMatchesForwardAndPartialRerun) {
  const TrainState st = TrainState::random(NetworkConfig{}, 4);
  const ImageGrid img = make_glyph_dataset(1, 4, 16, 5)[0].image;
  ForwardTrace trace;
  forward_traced(st, img, trace);
  const ForwardResult direct = forward(st, img);
  EXPECT_EQ(trace.result.capsule_activations, direct.capsule_activations);
  EXPECT_EQ(trace.result.conv_logits, direct.conv_logits);
  ASSERT_EQ(trace.capsules.size(), 4u);
  forward_from(st, 2, trace);
  EXPECT_EQ(trace.result.conv_logits, direct.conv_logits);
}

TEST(NaivePose, QuarterTurnEquivariant) {
  const auto data = make_glyph_dataset(8, 4, 16, 6);
  for (const auto& s : data) {
    const Rot2 p = naive_pose(s.image, BlockGeometry::two_by_two(), 3);
    const Rot2 q = naive_pose(rotate_quarter(s.image, 1), BlockGeometry::two_by_two(), 3);
    EXPECT_LT(pose_deviation(q, compose(Rot2::quarter_turn(1), p)), 1e-12);
  }
}

TEST(Glyphs, DatasetIsDeterministicAndLabelled) {
  const auto a = make_glyph_dataset(10, 4, 16, 5);
  const auto b = make_glyph_dataset(10, 4, 16, 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.pixels(), b[i].image.pixels());
    EXPECT_EQ(a[i].label, i % 4);
    for (double p : a[i].image.pixels()) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
  EXPECT_THROW(make_glyph_dataset(4, 7, 16, 1), std::invalid_argument);
  EXPECT_EQ(glyph_name(2), "plus");
}

TEST(Glyphs, RotateImageQuarterIsExactAndOthersResample) {
  const ImageGrid img = render_glyph(0, 16);
  EXPECT_EQ(rotate_image(img, std::numbers::pi / 2).pixels(), rotate_quarter(img, 1).pixels());
  EXPECT_EQ(rotate_image(img, 0.0).pixels(), img.pixels());
  const ImageGrid r = rotate_image(img, 0.3);
  EXPECT_NE(r.pixels(), img.pixels());
}
