// Penalized forward null control on a small instance, then the observability
// constant of the forward adjoint on the deterministic tree.
#include <cmath>
#include <cstdio>

#include "stochnull/control.hpp"
#include "stochnull/experiments.hpp"

using namespace stochnull;

int main() {
  const SpatialGrid grid = build_grid(1.0, 32, {0.25, 0.75}, {0.4, 0.6});
  const ScenarioTree tree = ScenarioTree::binary(6, 1.0);
  CoefficientFunctions f;
  f.a1 = 1.0;
  f.a2 = ScalarField::parse("0.5*sin(pi*x)");
  const SpdeProblem p(grid, tree, sample_coefficients(grid, tree, f));

  const Eigen::VectorXd y0 = (M_PI * grid.x.array()).sin().matrix();
  HumConfig cfg;
  cfg.epsilon = 1e-3;
  const ForwardHumResult r = hum_forward(p, y0, cfg);
  std::printf("E|y(T)|^2 = %.6e  cost = %.6e  K = %g  CG iterations = %d\n", r.report.terminal_norm,
              r.report.control_cost, r.report.cost_exponent, r.report.cg_iterations);

  const ScenarioTree det = ScenarioTree::collapsed(128, 1.0);
  const SpdeProblem q(grid, det, sample_coefficients(grid, det, {}));
  const ObservabilityEstimate e = observability_constant(q, ObservabilityDirection::kForward15);
  std::printf("c_obs = %.6e after %d iterations (%s)\n", e.c_obs, e.iterations, e.method.c_str());
  return 0;
}
