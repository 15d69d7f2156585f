#include "stochnull/control.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace stochnull {
namespace {

using testing::make_problem;
using testing::random_matrix;
using testing::random_vector;

Eigen::VectorXd sine(const SpatialGrid& g) { return (M_PI * g.x.array() / g.L).sin().matrix(); }

CoefficientFunctions criterion_coefficients() {
  CoefficientFunctions f;
  f.a1 = 1.0;
  f.a2 = 0.5;
  f.b1 = 0.5;
  f.b2 = 0.5;
  return f;
}

TEST(CostExponent, ForwardSubstitutions) {
  EXPECT_EQ(k_cost_exponent(1.0, 0, 0, 0, 0), 2.0);
  EXPECT_EQ(k_cost_exponent(1.0, 1, 0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(k_cost_exponent(0.5, 0, 2, 0, 0), 5.0 + std::pow(2.0, 2.0 / 3.0));
  EXPECT_NEAR(k_cost_exponent(0.5, 0, 2, 0, 0), 6.5874, 1e-4);
  // (1+T)|B1|² + |B2|²
  EXPECT_DOUBLE_EQ(k_cost_exponent(2.0, 0, 0, 1, 3), 1 + 0.5 + 3 + 9);
}

TEST(CostExponent, BackwardSubstitutions) {
  EXPECT_EQ(m_cost_exponent(1.0, 0, 0, 0), 2.0);
  EXPECT_EQ(m_cost_exponent(1.0, 0, 0, 1), 4.0);
  EXPECT_EQ(m_cost_exponent(2.0, 0, 1, 0), 4.5);
  EXPECT_DOUBLE_EQ(m_cost_exponent(1.0, 8, 0, 0), 2 + 4 + 8);
}

TEST(CostExponent, RejectsBadArguments) {
  EXPECT_THROW(k_cost_exponent(0.0, 0, 0, 0, 0), ValidationError);
  EXPECT_THROW(k_cost_exponent(1.0, -1, 0, 0, 0), ValidationError);
  EXPECT_THROW(m_cost_exponent(-1.0, 0, 0, 0), ValidationError);
}

TEST(HumConfig, Validation) {
  HumConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epsilon = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = HumConfig{};
  c.cg_tol = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = HumConfig{};
  c.cg_max_iter = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ConjugateGradient, SolvesSmallSpdSystem) {
  Eigen::MatrixXd a(3, 3);
  a << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  const Eigen::VectorXd b(Eigen::Vector3d(1, -2, 0.5));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; };
  auto dot = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) { return u.dot(v); };
  const CgResult r = conjugate_gradient(x, b, apply, dot, 1e-14, 10);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 3);
  EXPECT_LT((a * x + b).norm(), 1e-12);
  const Eigen::VectorXd exact = -a.ldlt().solve(b);
  EXPECT_NEAR(r.trace.value.back(), 0.5 * exact.dot(a * exact) + b.dot(exact), 1e-13);
}

TEST(DualFunctional, ZeroDatumGivesTransportTerm) {
  const ScenarioTree tree = ScenarioTree::binary(4, 1.0);
  const SpdeProblem p = make_problem(12, tree, testing::rich_coefficients());
  std::mt19937_64 rng(1);
  const Eigen::VectorXd y0 = random_vector(12, rng);
  const DualValue d = dual_functional(p, y0, 0.1, Eigen::MatrixXd::Zero(12, 16));
  EXPECT_EQ(d.value, 0.0);
  EXPECT_LT((d.gradient - forward_solve(p, y0).leaves(tree)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DualFunctional, PositiveQuadraticWithoutData) {
  const ScenarioTree tree = ScenarioTree::binary(4, 1.0);
  const SpdeProblem p = make_problem(12, tree, testing::rich_coefficients());
  std::mt19937_64 rng(2);
  for (int s = 0; s < 5; ++s) {
    const Eigen::MatrixXd zT = random_matrix(12, 16, rng);
    const double eps = 0.3;
    const DualValue d = dual_functional(p, Eigen::VectorXd::Zero(12), eps, zT);
    EXPECT_GE(d.value, 0.5 * eps * leaf_inner(tree, p.grid(), zT, zT));
  }
}

TEST(DualFunctional, GradientMatchesCentralDifferences) {
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  const SpdeProblem p = make_problem(16, tree, testing::rich_coefficients());
  std::mt19937_64 rng(3);
  const Eigen::VectorXd y0 = random_vector(16, rng);
  const Eigen::MatrixXd zT = random_matrix(16, 64, rng);
  const double eps = 0.01, step = 1e-5;
  const DualValue d = dual_functional(p, y0, eps, zT);
  for (int dir = 0; dir < 10; ++dir) {
    const Eigen::MatrixXd e = random_matrix(16, 64, rng);
    const double fd = (dual_functional(p, y0, eps, zT + step * e).value -
                       dual_functional(p, y0, eps, zT - step * e).value) / (2 * step);
    const double an = leaf_inner(tree, p.grid(), d.gradient, e);
    EXPECT_LE(std::abs(an - fd), 1e-6 * std::max(std::abs(an), 1.0)) << dir;
  }
}

TEST(DualFunctional, GramianIsSelfAdjoint) {
  const ScenarioTree tree = ScenarioTree::binary(5, 1.0);
  const SpdeProblem p = make_problem(10, tree, testing::rich_coefficients());
  std::mt19937_64 rng(4);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(10);
  for (int s = 0; s < 5; ++s) {
    const Eigen::MatrixXd a = random_matrix(10, 32, rng), b = random_matrix(10, 32, rng);
    const Eigen::MatrixXd ga = dual_functional(p, zero, 1.0, a).gradient;
    const Eigen::MatrixXd gb = dual_functional(p, zero, 1.0, b).gradient;
    const double lhs = leaf_inner(tree, p.grid(), ga, b), rhs = leaf_inner(tree, p.grid(), a, gb);
    EXPECT_NEAR(lhs, rhs, 1e-12 * (std::abs(lhs) + std::abs(rhs)));
  }
}

TEST(HumForward, ZeroDatumNeedsNoControl) {
  const ScenarioTree tree = ScenarioTree::binary(5, 1.0);
  const SpdeProblem p = make_problem(12, tree, criterion_coefficients());
  const ForwardHumResult r = hum_forward(p, Eigen::VectorXd::Zero(12), {});
  EXPECT_EQ(r.report.cg_iterations, 0);
  EXPECT_EQ(r.report.control_cost, 0.0);
  EXPECT_EQ(r.report.terminal_norm, 0.0);
  EXPECT_EQ(r.u.values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.v.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(HumForward, OptimalityIdentity) {
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  const SpdeProblem p = make_problem(16, tree, testing::rich_coefficients());
  HumConfig cfg;
  cfg.epsilon = 1e-2;
  const ForwardHumResult r = hum_forward(p, sine(p.grid()), cfg);
  EXPECT_TRUE(r.report.converged);
  EXPECT_LE(r.report.identity_residual, 1e-8);
  // y(T) = -ε zT at the optimum
  const Eigen::MatrixXd yT = r.y.leaves(tree);
  EXPECT_LE((yT + cfg.epsilon * r.zT).norm(), 1e-8 * yT.norm());
  // independent recomputation of the pairing through the adjoint
  const BackwardSolution z = backward_solve(p, r.zT, BackwardMode::kAdjoint13);
  const double pairing = -p.grid().inner(sine(p.grid()), z.root());
  EXPECT_NEAR(r.report.control_cost + r.report.terminal_norm / cfg.epsilon, pairing, 1e-8 * std::abs(pairing));
}

TEST(HumForward, ValueTraceIsMonotone) {
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  const SpdeProblem p = make_problem(16, tree, criterion_coefficients());
  HumConfig cfg;
  cfg.epsilon = 1e-3;
  const ForwardHumResult r = hum_forward(p, sine(p.grid()), cfg);
  const auto& v = r.report.trace.value;
  ASSERT_GE(v.size(), 3u);
  for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LE(v[i], v[i - 1] + 1e-13 * std::abs(v.back())) << i;
}

TEST(HumForward, ScalingEquivariance) {
  const ScenarioTree tree = ScenarioTree::binary(5, 1.0);
  const SpdeProblem p = make_problem(16, tree, criterion_coefficients());
  HumConfig cfg;
  cfg.epsilon = 1e-2;
  const Eigen::VectorXd y0 = sine(p.grid());
  const ForwardHumResult one = hum_forward(p, y0, cfg);
  const ForwardHumResult two = hum_forward(p, 2 * y0, cfg);
  EXPECT_LE((two.u.values - 2 * one.u.values).norm(), 1e-9 * one.u.values.norm());
  EXPECT_LE((two.v.values - 2 * one.v.values).norm(), 1e-9 * one.v.values.norm());
  EXPECT_NEAR(two.report.control_cost, 4 * one.report.control_cost, 1e-9 * one.report.control_cost);
}

TEST(HumForward, TerminalNormDecreasesWithEpsilon) {
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  const SpdeProblem p = make_problem(16, tree, {});
  const Eigen::VectorXd y0 = sine(p.grid());
  const Eigen::MatrixXd free = forward_solve(p, y0).leaves(tree);
  double previous = leaf_inner(tree, p.grid(), free, free);
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
    HumConfig cfg;
    cfg.epsilon = eps;
    const ForwardHumResult r = hum_forward(p, y0, cfg);
    EXPECT_LT(r.report.terminal_norm, previous) << eps;
    previous = r.report.terminal_norm;
  }
}

TEST(HumForward, NonConvergenceIsReported) {
  const ScenarioTree tree = ScenarioTree::binary(5, 1.0);
  const SpdeProblem p = make_problem(16, tree, criterion_coefficients());
  HumConfig cfg;
  cfg.epsilon = 1e-4;
  cfg.cg_max_iter = 2;
  const ForwardHumResult r = hum_forward(p, sine(p.grid()), cfg);
  EXPECT_FALSE(r.report.converged);
  EXPECT_EQ(r.report.cg_iterations, 2);
  EXPECT_GT(r.report.cg_residual, cfg.cg_tol);
  EXPECT_TRUE(std::isfinite(r.report.bound_ratio));
}

TEST(HumForward, CollapsedTreeUsesNoNoiseControl) {
  const ScenarioTree tree = ScenarioTree::collapsed(6, 1.0);
  const SpdeProblem p = make_problem(16, tree, {});
  const ForwardHumResult r = hum_forward(p, sine(p.grid()), {});
  EXPECT_EQ(r.v.values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE(r.report.identity_residual, 1e-8);
}

TEST(HumBackward, ZeroDatumNeedsNoControl) {
  const ScenarioTree tree = ScenarioTree::binary(5, 1.0);
  const SpdeProblem p = make_problem(12, tree, criterion_coefficients());
  const BackwardHumResult r = hum_backward(p, Eigen::MatrixXd::Zero(12, 32), {});
  EXPECT_EQ(r.report.cg_iterations, 0);
  EXPECT_EQ(r.u.values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.report.terminal_norm, 0.0);
}

TEST(HumBackward, OptimalityIdentity) {
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  const SpdeProblem p = make_problem(16, tree, testing::rich_coefficients());
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd yT = random_matrix(16, 64, rng);
  HumConfig cfg;
  cfg.epsilon = 1e-2;
  const BackwardHumResult r = hum_backward(p, yT, cfg);
  EXPECT_TRUE(r.report.converged);
  EXPECT_LE(r.report.identity_residual, 1e-8);
  EXPECT_LE((r.y.root() - cfg.epsilon * r.z0).norm(), 1e-8 * r.y.root().norm());
}

TEST(HumBackward, InitialNormDecreasesWithEpsilon) {
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  CoefficientFunctions f;
  f.a2 = 0.5;
  f.b = 0.5;
  const SpdeProblem p = make_problem(16, tree, f);
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd yT = random_matrix(16, 64, rng);
  double previous = p.grid().norm2(backward_solve(p, yT, BackwardMode::kControlled12).root());
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
    HumConfig cfg;
    cfg.epsilon = eps;
    const BackwardHumResult r = hum_backward(p, yT, cfg);
    EXPECT_LT(r.report.terminal_norm, previous) << eps;
    previous = r.report.terminal_norm;
  }
}

TEST(HumBackward, DeterministicMatchesCollapsedTree) {
  CoefficientFunctions f;
  f.a1 = 0.7;
  f.b = 0.4;
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  const ScenarioTree single = ScenarioTree::collapsed(6, 1.0);
  const SpdeProblem p = make_problem(16, tree, f);
  const SpdeProblem q = make_problem(16, single, f);
  const Eigen::VectorXd datum = sine(p.grid());
  HumConfig cfg;
  cfg.epsilon = 1e-3;
  const BackwardHumResult full = hum_backward(p, datum.replicate(1, 64), cfg);
  const BackwardHumResult one = hum_backward(q, datum, cfg);
  EXPECT_LE((full.z0 - one.z0).cwiseAbs().maxCoeff(), 1e-12 * one.z0.cwiseAbs().maxCoeff());
  EXPECT_LE((full.y.root() - one.y.root()).cwiseAbs().maxCoeff(),
            1e-12 * one.y.root().cwiseAbs().maxCoeff());
  EXPECT_NEAR(full.report.control_cost, one.report.control_cost, 1e-12 * one.report.control_cost);
}

TEST(HumCost, GrowsAsHorizonShrinks) {
  double previous = -INFINITY;
  for (double T : {1.0, 0.5, 0.25}) {
    const ScenarioTree tree = ScenarioTree::binary(6, T);
    const SpdeProblem p = make_problem(16, tree, criterion_coefficients());
    HumConfig cfg;
    cfg.epsilon = 1e-3;
    const ForwardHumResult r = hum_forward(p, sine(p.grid()), cfg);
    EXPECT_GT(std::log(r.report.control_cost), previous) << T;
    previous = std::log(r.report.control_cost);
  }
}

}  // namespace
}  // namespace stochnull
