#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "equicaps/group.hpp"
#include "equicaps/rng.hpp"

using namespace equicaps;

TEST(Rot2, ComposeAddsAngles) {
  const Rot2 a = Rot2::from_angle(0.3);
  const Rot2 b = Rot2::from_angle(1.1);
  EXPECT_NEAR(compose(a, b).angle(), 1.4, 1e-15);
  EXPECT_NEAR(compose(b, a).angle(), 1.4, 1e-15);
}

TEST(Rot2, InverseIsConjugate) {
  const Rot2 a = Rot2::from_angle(2.0);
  const Rot2 inv = inverse(a);
  EXPECT_EQ(inv.c(), a.c());
  EXPECT_EQ(inv.s(), -a.s());
  EXPECT_NEAR(pose_deviation(compose(a, inv), Rot2{}), 0.0, 1e-15);
}

TEST(Rot2, QuarterTurnsAreExactPermutations) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Rot2 p = rng.rotation();
    const Rot2 q = compose(Rot2::quarter_turn(1), p);
    EXPECT_EQ(q.c(), -p.s());
    EXPECT_EQ(q.s(), p.c());
    const Rot2 back = compose(Rot2::quarter_turn(-1), q);
    EXPECT_EQ(back, p);
  }
  EXPECT_EQ(Rot2::quarter_turn(2).c(), -1.0);
  EXPECT_EQ(Rot2::quarter_turn(5), Rot2::quarter_turn(1));
  EXPECT_EQ(Rot2::quarter_turn(3).quarter_index(), 3);
  EXPECT_EQ(Rot2::from_angle(0.5).quarter_index(), -1);
}

TEST(Rot2, WeightedMeanOracle) {
  // 3 * (1, 0) + 1 * (0, 1), normalized.
  const std::vector<Rot2> p = {Rot2{}, Rot2::quarter_turn(1)};
  const std::vector<double> w = {3.0, 1.0};
  const Rot2 m = weighted_mean(p, w);
  EXPECT_NEAR(m.c(), 3.0 / std::sqrt(10.0), 1e-15);
  EXPECT_NEAR(m.s(), 1.0 / std::sqrt(10.0), 1e-15);
}

TEST(Rot2, WeightedMeanIsLeftEquivariantAndOrderFree) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    std::vector<Rot2> p(5);
    std::vector<double> w(5);
    for (int i = 0; i < 5; ++i) {
      p[i] = rng.rotation();
      w[i] = rng.uniform(0.1, 1.0);
    }
    const Rot2 g = rng.rotation();
    std::vector<Rot2> gp;
    for (const auto& x : p) gp.push_back(compose(g, x));
    EXPECT_LT(pose_deviation(weighted_mean(gp, w), compose(g, weighted_mean(p, w))), 1e-12);

    std::vector<Rot2> rp(p.rbegin(), p.rend());
    std::vector<double> rw(w.rbegin(), w.rend());
    EXPECT_EQ(weighted_mean(rp, rw), weighted_mean(p, w));
  }
}

TEST(Rot2, DegenerateMeanThrows) {
  const std::vector<Rot2> p = {Rot2{}, Rot2::quarter_turn(2)};
  const std::vector<double> w = {1.0, 1.0};
  EXPECT_THROW(weighted_mean(p, w), DegenerateMean);
  EXPECT_THROW(Rot2::from_vector(1e-9, 0.0), DegenerateMean);
  const std::vector<double> zero = {0.0, 0.0};
  EXPECT_THROW(weighted_mean(p, zero), DegenerateMean);
  const std::vector<double> bad = {-1.0, 1.0};
  EXPECT_THROW(weighted_mean(p, bad), std::invalid_argument);
}

TEST(Rot2, DistanceIsNegativeDotAndLeftInvariant) {
  EXPECT_DOUBLE_EQ(distance(Rot2{}, Rot2{}), -1.0);
  EXPECT_DOUBLE_EQ(distance(Rot2{}, Rot2::quarter_turn(2)), 1.0);
  EXPECT_NEAR(distance(Rot2{}, Rot2::quarter_turn(1)), 0.0, 1e-16);
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const Rot2 a = rng.rotation(), b = rng.rotation(), g = rng.rotation();
    EXPECT_NEAR(distance(compose(g, a), compose(g, b)), distance(a, b), 1e-14);
  }
}

TEST(Rot2, ActsOnPointsByRotation) {
  const Vec2 v = act_on_point(Rot2::from_angle(std::numbers::pi / 2), {1.0, 0.0});
  EXPECT_NEAR(v.x, 0.0, 1e-15);
  EXPECT_NEAR(v.y, 1.0, 1e-15);
}

TEST(TransN, MeanAndDistance) {
  const std::vector<TransN> p = {TransN({0.0, 0.0}), TransN({4.0, 2.0})};
  const std::vector<double> w = {1.0, 3.0};
  const TransN m = weighted_mean(p, w);
  EXPECT_DOUBLE_EQ(m[0], 3.0);
  EXPECT_DOUBLE_EQ(m[1], 1.5);
  EXPECT_DOUBLE_EQ(distance(TransN({0.0, 0.0}), TransN({3.0, 4.0})), 5.0);
  EXPECT_EQ(compose(TransN({1.0, 2.0}), inverse(TransN({1.0, 2.0}))), TransN::zero(2));
  EXPECT_THROW(compose(TransN({1.0}), TransN({1.0, 2.0})), GroupKindError);
}

TEST(GroupElement, ProductComponentsActInOrder) {
  const GroupDesc d = GroupDesc::parse("so2xr2");
  EXPECT_EQ(d.name(), "so2xr2");
  const GroupElement g(GroupElement::Product{GroupElement(Rot2::quarter_turn(1)), GroupElement(TransN({1.0, 0.0}))});
  const Vec2 x = act_on_point(g, {1.0, 0.0});
  EXPECT_NEAR(x.x, 1.0, 1e-15);
  EXPECT_NEAR(x.y, 1.0, 1e-15);
  EXPECT_EQ(GroupElement::identity(d).desc(), d);
}

TEST(GroupElement, MismatchedKindsThrow) {
  const GroupElement r(Rot2{});
  const GroupElement t(TransN({0.0, 0.0}));
  EXPECT_THROW(compose(r, t), GroupKindError);
  EXPECT_THROW(distance(r, t), GroupKindError);
  EXPECT_THROW(r.trans(), GroupKindError);
  EXPECT_THROW(GroupDesc::parse("so3"), std::invalid_argument);
}

TEST(CanonicalSum, IndependentOfOrder) {
  std::vector<double> v = {1e16, 1.0, -1e16, 3.5, 1e-3};
  const double a = canonical_sum(v);
  std::vector<double> r(v.rbegin(), v.rend());
  EXPECT_EQ(canonical_sum(r), a);
}
