#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "stochnull/errors.hpp"
#include "stochnull/expression.hpp"
#include "stochnull/grid.hpp"
#include "stochnull/scenario.hpp"

namespace stochnull {

/// Deterministic coefficient functions of (t, x).
struct CoefficientFunctions {
  ScalarField a = 1.0;   // diffusion, >= beta > 0
  ScalarField a1 = 0.0;  // drift potential
  ScalarField a2 = 0.0;  // noise potential
  ScalarField b1 = 0.0;  // drift convection
  ScalarField b2 = 0.0;  // noise convection
  ScalarField b = 0.0;   // convection of the backward controlled problem
};

/// Coefficients sampled at every time level (columns 0..M). The diffusion is
/// sampled at cell midpoints (N + 1 rows), everything else at nodes.
struct ProblemCoefficients {
  Eigen::MatrixXd a_mid;
  Eigen::MatrixXd a_node;
  Eigen::MatrixXd a1, a2, b1, b2, b;

  double beta = 0.0;
  double sup_a1 = 0.0, sup_a2 = 0.0, sup_b1 = 0.0, sup_b2 = 0.0, sup_b = 0.0;

  void refresh_norms() {
    auto sup = [](const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; };
    sup_a1 = sup(a1);
    sup_a2 = sup(a2);
    sup_b1 = sup(b1);
    sup_b2 = sup(b2);
    sup_b = sup(b);
    beta = std::min(a_mid.minCoeff(), a_node.minCoeff());
    if (!(beta > 0)) throw ValidationError("diffusion coefficient a must be positive everywhere");
  }
};

inline ProblemCoefficients sample_coefficients(const SpatialGrid& grid, const ScenarioTree& tree,
                                               const CoefficientFunctions& f) {
  const int levels = tree.steps() + 1;
  const Eigen::VectorXd mid = grid.midpoints();
  ProblemCoefficients c;
  c.a_mid.resize(grid.N + 1, levels);
  c.a_node.resize(grid.N, levels);
  c.a1.resize(grid.N, levels);
  c.a2.resize(grid.N, levels);
  c.b1.resize(grid.N, levels);
  c.b2.resize(grid.N, levels);
  c.b.resize(grid.N, levels);
  for (int n = 0; n < levels; ++n) {
    const double t = tree.time(n);
    for (int j = 0; j <= grid.N; ++j) c.a_mid(j, n) = f.a(t, mid[j]);
    for (int j = 0; j < grid.N; ++j) {
      const double x = grid.x[j];
      c.a_node(j, n) = f.a(t, x);
      c.a1(j, n) = f.a1(t, x);
      c.a2(j, n) = f.a2(t, x);
      c.b1(j, n) = f.b1(t, x);
      c.b2(j, n) = f.b2(t, x);
      c.b(j, n) = f.b(t, x);
    }
  }
  if (!c.a_mid.allFinite() || !c.a_node.allFinite() || !c.a1.allFinite() || !c.a2.allFinite() ||
      !c.b1.allFinite() || !c.b2.allFinite() || !c.b.allFinite())
    throw ValidationError("coefficient samples are not finite");
  c.refresh_norms();
  return c;
}

}  // namespace stochnull
