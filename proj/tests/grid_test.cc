#include "stochnull/grid.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace stochnull {
namespace {

std::vector<int> one_based(const std::vector<bool>& mask) {
  std::vector<int> r;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) r.push_back(static_cast<int>(j) + 1);
  return r;
}

TEST(BuildGrid, MasksOnUnitInterval) {
  const SpatialGrid g = build_grid(1.0, 7, {0.25, 0.75}, {0.4, 0.6});
  EXPECT_DOUBLE_EQ(g.h, 0.125);
  EXPECT_EQ(one_based(g.g0_mask), (std::vector<int>{3, 4, 5}));
  EXPECT_EQ(one_based(g.g1_mask), (std::vector<int>{4}));
  EXPECT_EQ(g.g0_count(), 3);
}

TEST(BuildGrid, CountsNodesOfLongerDomain) {
  const SpatialGrid g = build_grid(2.0, 15, {0.5, 1.5}, {0.9, 1.1});
  // x_i = i/8 inside the open interval (0.5, 1.5): i = 5..11
  int expected = 0;
  for (int i = 1; i <= 15; ++i) {
    const double x = i * 0.125;
    if (x > 0.5 && x < 1.5) ++expected;
  }
  EXPECT_EQ(expected, 7);
  EXPECT_EQ(g.g0_count(), expected);
}

TEST(BuildGrid, RejectsBadConfigurations) {
  EXPECT_THROW(build_grid(1.0, 7, {0.0, 0.5}, {0.1, 0.2}), ValidationError);
  EXPECT_THROW(build_grid(1.0, 7, {0.5, 1.0}, {0.6, 0.7}), ValidationError);
  EXPECT_THROW(build_grid(1.0, 3, {0.25, 0.75}, {0.4, 0.6}), ValidationError);
  EXPECT_THROW(build_grid(1.0, 7, {0.25, 0.75}, {0.1, 0.6}), ValidationError);
  EXPECT_THROW(build_grid(1.0, 7, {0.25, 0.75}, {0.4, 0.75}), ValidationError);
  // G0 must contain a node
  EXPECT_THROW(build_grid(1.0, 7, {0.26, 0.3}, {0.27, 0.29}), ValidationError);
}

TEST(Elliptic, ConstantCoefficientStencil) {
  // below the N >= 4 minimum of build_grid, so assembled on a bare mesh
  SpatialGrid g;
  g.N = 3;
  g.h = 0.25;
  const TridiagonalOperator e = assemble_elliptic(g, Eigen::VectorXd::Ones(4));
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(e.diag[i], -32.0);
  for (int i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(e.lower[i], 16.0);
    EXPECT_DOUBLE_EQ(e.upper[i], 16.0);
  }
}

TEST(Elliptic, VariableCoefficientIsSymmetric) {
  const SpatialGrid g = build_grid(1.0, 20, {0.2, 0.8}, {0.4, 0.6});
  const TridiagonalOperator e = assemble_elliptic(g, [](double x) { return 1 + x; });
  const Eigen::MatrixXd m = e.dense();
  EXPECT_TRUE(m == m.transpose());
}

TEST(Elliptic, RejectsNonPositiveCoefficient) {
  const SpatialGrid g = build_grid(1.0, 8, {0.2, 0.8}, {0.4, 0.6});
  EXPECT_THROW(assemble_elliptic(g, [](double x) { return x - 0.5; }), ValidationError);
  EXPECT_THROW(assemble_elliptic(g, Eigen::VectorXd::Ones(3)), ValidationError);
}

double eigen_error(int n) {
  const double L = 1.0;
  const SpatialGrid g = build_grid(L, n, {0.2, 0.8}, {0.4, 0.6});
  const TridiagonalOperator e = assemble_elliptic(g, [](double) { return 1.0; });
  const Eigen::VectorXd u = (M_PI * g.x.array() / L).sin().matrix();
  const Eigen::VectorXd r = e.apply(u) + (M_PI / L) * (M_PI / L) * u;
  return r.norm() / ((M_PI / L) * (M_PI / L) * u.norm());
}

TEST(Elliptic, SecondOrderOnEigenfunction) {
  const double coarse = eigen_error(15);
  const double fine = eigen_error(31);
  EXPECT_LT(coarse, 1e-2);
  EXPECT_GE(coarse / fine, 3.5);
}

TEST(Elliptic, NegativeIsPositiveDefinite) {
  const int n = 12;
  const SpatialGrid g = build_grid(1.0, n, {0.2, 0.8}, {0.4, 0.6});
  auto a = [](double x) { return 0.5 + x * x; };
  const double beta = 0.5;
  const TridiagonalOperator e = assemble_elliptic(g, a);
  // inverse power iteration on -E for its smallest eigenvalue
  const TridiagonalSolver solver(e.shifted(0.0, -1.0));
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
  double lambda = 0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd w = solver.solve(v);
    lambda = v.norm() / w.norm();
    v = w.normalized();
  }
  const double poincare = 4.0 / (g.h * g.h) * std::pow(std::sin(M_PI * g.h / (2 * g.L)), 2);
  EXPECT_GE(lambda, beta * poincare * (1 - 1e-10));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-e.dense());
  EXPECT_NEAR(lambda, es.eigenvalues().minCoeff(), 1e-8 * lambda);
}

TEST(Gradient, ZeroInZeroOut) {
  const SpatialGrid g = build_grid(1.0, 10, {0.2, 0.8}, {0.4, 0.6});
  EXPECT_EQ(gradient(g, Eigen::VectorXd::Zero(10)).norm(), 0.0);
  EXPECT_EQ(weak_divergence(g, Eigen::VectorXd::Zero(10)).norm(), 0.0);
  EXPECT_THROW(gradient(g, Eigen::VectorXd::Zero(9)), ValidationError);
  EXPECT_THROW(weak_divergence(g, Eigen::VectorXd::Zero(11)), ValidationError);
}

TEST(Gradient, WeakDivergenceIsNegativeTranspose) {
  const SpatialGrid g = build_grid(1.0, 16, {0.2, 0.8}, {0.4, 0.6});
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd u(16), q(16);
    for (int j = 0; j < 16; ++j) {
      u[j] = nd(rng);
      q[j] = nd(rng);
    }
    const double lhs = g.inner(weak_divergence(g, q), u);
    const double rhs = g.inner(q, gradient(g, u));
    const double scale = std::sqrt(g.norm2(q) * g.norm2(u)) / g.h;
    EXPECT_LE(std::abs(lhs + rhs), 1e-13 * scale);
  }
  // dense comparison against the assembled gradient
  const Eigen::MatrixXd d = gradient_operator(g).dense();
  Eigen::MatrixXd div(16, 16);
  for (int j = 0; j < 16; ++j) div.col(j) = weak_divergence(g, Eigen::VectorXd::Unit(16, j));
  EXPECT_TRUE(div == -d.transpose());
}

TEST(Gradient, ExactOnQuadratic) {
  const double L = 2.0;
  const SpatialGrid g = build_grid(L, 19, {0.4, 1.6}, {0.8, 1.2});
  const Eigen::VectorXd u = (g.x.array() * (L - g.x.array())).matrix();
  const Eigen::VectorXd du = gradient(g, u);
  for (int j = 0; j < g.N; ++j) EXPECT_NEAR(du[j], L - 2 * g.x[j], 1e-12);
}

TEST(Gradient, SecondOrderOnSmoothFunction) {
  auto err = [](int n) {
    const SpatialGrid g = build_grid(1.0, n, {0.2, 0.8}, {0.4, 0.6});
    const Eigen::VectorXd u = (M_PI * g.x.array()).sin().matrix();
    const Eigen::VectorXd du = gradient(g, u);
    return (du - (M_PI * (M_PI * g.x.array()).cos()).matrix()).cwiseAbs().maxCoeff();
  };
  EXPECT_GE(err(15) / err(31), 3.5);
}

TEST(Tridiagonal, SolverInvertsApply) {
  const SpatialGrid g = build_grid(1.0, 9, {0.2, 0.8}, {0.4, 0.6});
  const TridiagonalOperator j = assemble_elliptic(g, [](double x) { return 1 + x; }).shifted(1.0, -0.01);
  const TridiagonalSolver s(j);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(9, -1, 2);
  EXPECT_LT((j.apply(s.solve(b)) - b).norm(), 1e-13 * b.norm());
}

}  // namespace
}  // namespace stochnull
