#include "stochnull/scenario.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace stochnull {
namespace {

SpatialGrid unit_grid(int n = 7) { return build_grid(1.0, n, {0.25, 0.75}, {0.4, 0.6}); }

TEST(ScenarioTree, Shapes) {
  const ScenarioTree t2 = ScenarioTree::binary(2, 1.0);
  EXPECT_EQ(t2.node_count(), 7);
  EXPECT_DOUBLE_EQ(t2.dt(), 0.5);
  EXPECT_DOUBLE_EQ(t2.weight(2), 0.25);
  const ScenarioTree t8 = ScenarioTree::binary(8, 2.0);
  EXPECT_EQ(t8.node_count(), 511);
  EXPECT_DOUBLE_EQ(t8.dt(), 0.25);
  EXPECT_DOUBLE_EQ(t8.time(3), 0.75);
}

TEST(ScenarioTree, RejectsOversizedTree) {
  try {
    ScenarioTree::binary(20, 1.0);
    FAIL() << "expected a ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("MiB"), std::string::npos);
  }
  EXPECT_THROW(ScenarioTree::binary(1, 1.0), ValidationError);
  EXPECT_THROW(ScenarioTree::binary(4, 0.0), ValidationError);
  EXPECT_NO_THROW(ScenarioTree::binary(18, 1.0, 18));
}

TEST(ScenarioTree, IncrementMoments) {
  const ScenarioTree t = ScenarioTree::binary(5, 0.7);
  for (int n = 0; n < t.steps(); ++n) {
    double wsum = 0;
    for (int k = 0; k < t.nodes_at(n); ++k) {
      wsum += t.weight(n);
      const double w = t.brownian(n, k);
      const double up = t.brownian(n + 1, 2 * k) - w;
      const double dn = t.brownian(n + 1, 2 * k + 1) - w;
      EXPECT_NEAR(0.5 * (up + dn), 0.0, 1e-15);
      EXPECT_NEAR(0.5 * (up * up + dn * dn), t.dt(), 1e-15);
    }
    EXPECT_DOUBLE_EQ(wsum, 1.0);
  }
}

TEST(Expectation, ConstantField) {
  const ScenarioTree t = ScenarioTree::binary(4, 1.0);
  AdaptedField f(t, 3);
  f.values.setConstant(2.5);
  for (int n = 0; n <= 4; ++n) EXPECT_EQ(expectation(t, f, n), Eigen::VectorXd::Constant(3, 2.5));
}

TEST(Expectation, BrownianLeavesAreMeanZero) {
  const ScenarioTree t = ScenarioTree::binary(6, 1.0);
  AdaptedField f(t, 1);
  for (int n = 0; n <= 6; ++n)
    for (int k = 0; k < t.nodes_at(n); ++k) f.col(t.index(n, k))[0] = t.brownian(n, k);
  EXPECT_NEAR(expectation(t, f, 6)[0], 0.0, 1e-15);
}

TEST(Expectation, MatchesPathEnumeration) {
  const ScenarioTree t = ScenarioTree::binary(3, 1.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(-1, 1);
  AdaptedField f(t, 4);
  for (int c = 0; c < f.values.cols(); ++c)
    for (int r = 0; r < 4; ++r) f.values(r, c) = ud(rng);
  // brute force: each of the 8 paths ends at leaf k with probability 1/8
  Eigen::VectorXd direct = Eigen::VectorXd::Zero(4);
  for (int path = 0; path < 8; ++path) direct += f.col(7 + path) / 8.0;
  EXPECT_LT((expectation(t, f, 3) - direct).norm(), 1e-15);
}

TEST(Expectation, TowerPropertyIsExact) {
  const ScenarioTree t = ScenarioTree::binary(5, 1.0);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  AdaptedField f(t, 3);
  for (int c = 0; c < f.values.cols(); ++c)
    for (int r = 0; r < 3; ++r) f.values(r, c) = nd(rng);
  // replace level 4 by conditional means of level 5
  AdaptedField g = f;
  for (int k = 0; k < t.nodes_at(4); ++k)
    g.col(t.index(4, k)) = martingale_part(t, f.col(t.child_plus(4, k)), f.col(t.child_minus(4, k))).mean;
  EXPECT_TRUE(expectation(t, f, 5) == expectation(t, g, 4));
}

TEST(QtIntegral, ConstantField) {
  const SpatialGrid g = unit_grid();
  const ScenarioTree t = ScenarioTree::binary(4, 1.0);
  AdaptedField f(t, g.N);
  f.values.setOnes();
  // N h = 1 - h on the interior rectangle rule
  EXPECT_NEAR(qt_integral(t, g, f), 1.0, g.h + 1e-14);
  EXPECT_NEAR(qt_integral(t, g, f), g.N * g.h, 1e-14);
  EXPECT_NEAR(qt_integral(t, g, f, Region::kG0), g.g0_count() * g.h * 1.0, 1e-14);
  EXPECT_NEAR(qt_integral(t, g, f, Region::kG0), 0.5, g.h);
}

TEST(QtIntegral, TimeLinearField) {
  const SpatialGrid g = build_grid(1.0, 31, {0.25, 0.75}, {0.4, 0.6});
  for (int m : {4, 8, 16}) {
    const ScenarioTree t = ScenarioTree::binary(m, 2.0);
    AdaptedField f(t, g.N);
    for (int n = 0; n <= m; ++n) f.level(t, n).setConstant(t.time(n));
    const double exact = 2.0 * 2.0 * (g.N * g.h) / 2.0;
    // left rectangle rule undershoots by T·Δt/2 per unit length
    EXPECT_NEAR(qt_integral(t, g, f), exact - 2.0 * t.dt() / 2.0 * (g.N * g.h), 1e-12);
  }
}

TEST(QtIntegral, LinearAndPositive) {
  const SpatialGrid g = unit_grid();
  const ScenarioTree t = ScenarioTree::binary(3, 1.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  AdaptedField a(t, g.N), b(t, g.N);
  for (int c = 0; c < a.values.cols(); ++c)
    for (int r = 0; r < g.N; ++r) {
      a.values(r, c) = nd(rng);
      b.values(r, c) = nd(rng);
    }
  AdaptedField s = a;
  s.values = 2.0 * a.values - 3.0 * b.values;
  EXPECT_NEAR(qt_integral(t, g, s), 2 * qt_integral(t, g, a) - 3 * qt_integral(t, g, b), 1e-13);
  EXPECT_GT(qt_integral_squared(t, g, a), 0.0);
  EXPECT_GE(qt_integral_squared(t, g, a), qt_integral_squared(t, g, a, Region::kG0));
}

TEST(Martingale, SimpleCases) {
  const ScenarioTree t = ScenarioTree::binary(4, 1.0);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(5, 0, 1);
  EXPECT_EQ(martingale_part(t, v, v).z.norm(), 0.0);
  const Eigen::VectorXd up = Eigen::VectorXd::Constant(1, t.sqrt_dt());
  EXPECT_DOUBLE_EQ(martingale_part(t, up, -up).z[0], 1.0);
  const double sigma = 0.3;
  const Eigen::VectorXd ep = Eigen::VectorXd::Constant(1, std::exp(sigma * t.sqrt_dt()));
  const Eigen::VectorXd em = Eigen::VectorXd::Constant(1, std::exp(-sigma * t.sqrt_dt()));
  EXPECT_NEAR(martingale_part(t, ep, em).z[0], std::sinh(sigma * t.sqrt_dt()) / t.sqrt_dt(), 1e-15);
  EXPECT_NEAR(martingale_part(t, ep, em).z[0], sigma, 0.01);
}

TEST(Martingale, ReconstructsChildren) {
  const ScenarioTree t = ScenarioTree::binary(4, 0.8);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd p(6), m(6);
    for (int j = 0; j < 6; ++j) {
      p[j] = nd(rng);
      m[j] = nd(rng);
    }
    const MartingaleSplit s = martingale_part(t, p, m);
    worst = std::max(worst, (s.mean + s.z * t.sqrt_dt() - p).cwiseAbs().maxCoeff());
    worst = std::max(worst, (s.mean - s.z * t.sqrt_dt() - m).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-15 * 8);
}

TEST(Martingale, LeafLevelHasNoZ) {
  const ScenarioTree t = ScenarioTree::binary(3, 1.0);
  AdaptedField f(t, 2);
  EXPECT_THROW(martingale_field(t, f, 3), ValidationError);
  EXPECT_NO_THROW(martingale_field(t, f, 2));
}

TEST(CollapsedTree, SinglePath) {
  const ScenarioTree t = ScenarioTree::collapsed(64, 0.5);
  EXPECT_EQ(t.node_count(), 65);
  EXPECT_EQ(t.leaf_count(), 1);
  EXPECT_EQ(t.weight(40), 1.0);
  EXPECT_EQ(t.child_plus(3, 0), t.child_minus(3, 0));
}

}  // namespace
}  // namespace stochnull
