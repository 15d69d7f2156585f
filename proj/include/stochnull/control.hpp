#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochnull/errors.hpp"
#include "stochnull/scenario.hpp"
#include "stochnull/spde.hpp"

namespace stochnull {

inline double k_cost_exponent(double T, double a1, double a2, double b1, double b2) {
  internal::require(T > 0, "horizon T must be positive");
  internal::require(a1 >= 0 && a2 >= 0 && b1 >= 0 && b2 >= 0, "coefficient norms must be non-negative");
  return 1 + 1 / T + std::cbrt(a1 * a1) + T * a1 + std::cbrt(a2 * a2) + T * a2 * a2 +
         (1 + T) * b1 * b1 + b2 * b2;
}

inline double m_cost_exponent(double T, double a1, double a2, double b) {
  internal::require(T > 0, "horizon T must be positive");
  internal::require(a1 >= 0 && a2 >= 0 && b >= 0, "coefficient norms must be non-negative");
  return 1 + 1 / T + std::cbrt(a1 * a1) + T * a1 + (1 + T) * a2 * a2 + (1 + T) * b * b;
}

inline double k_cost_exponent(const SpdeProblem& p) {
  const ProblemCoefficients& c = p.coeffs();
  return k_cost_exponent(p.tree().horizon(), c.sup_a1, c.sup_a2, c.sup_b1, c.sup_b2);
}

inline double m_cost_exponent(const SpdeProblem& p) {
  const ProblemCoefficients& c = p.coeffs();
  return m_cost_exponent(p.tree().horizon(), c.sup_a1, c.sup_a2, c.sup_b);
}

struct HumConfig {
  double epsilon = 1e-2;
  double cg_tol = 1e-12;
  int cg_max_iter = 2000;
  double cost_constant = 1.0;  // C in e^{C·exponent}

  void validate() const {
    internal::require(epsilon > 0 && std::isfinite(epsilon), "epsilon must be positive");
    internal::require(cg_tol > 0 && cg_tol < 1, "cg_tol must lie in (0, 1)");
    internal::require(cg_max_iter >= 1, "cg_max_iter must be at least 1");
    internal::require(std::isfinite(cost_constant), "cost constant must be finite");
  }
};

inline double default_epsilon(const SpatialGrid& grid) { return grid.h * grid.h; }

struct CgTrace {
  std::vector<double> residual;  // relative residual before each iteration, then final
  std::vector<double> value;     // dual functional at each iterate
};

struct CgResult {
  int iterations = 0;
  bool converged = false;
  bool breakdown = false;  // curvature lost to rounding on a semidefinite operator
  double residual = 0.0;
  CgTrace trace;
};

/// Conjugate gradients for A x = -b, i.e. the minimizer of ½⟨Ax,x⟩ + ⟨b,x⟩,
/// in the inner product `dot`. x holds the initial guess on entry. With
/// stop_on_breakdown, non-positive curvature ends the iteration instead of throwing.
template <typename Vec, typename Apply, typename Dot>
CgResult conjugate_gradient(Vec& x, const Vec& b, Apply&& apply, Dot&& dot, double tol, int max_iter,
                            bool stop_on_breakdown = false) {
  CgResult res;
  const double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) {
    x = b * 0.0;
    res.converged = true;
    res.trace.residual.push_back(0.0);
    res.trace.value.push_back(0.0);
    return res;
  }
  Vec r = apply(x) + b;
  Vec d = -r;
  double rr = dot(r, r);
  auto record = [&] {
    res.residual = std::sqrt(rr) / bnorm;
    res.trace.residual.push_back(res.residual);
    res.trace.value.push_back(0.5 * dot(r + b, x));
  };
  record();
  while (res.residual > tol && res.iterations < max_iter) {
    const Vec ad = apply(d);
    const double dad = dot(d, ad);
    if (!(dad > 0)) {
      if (!stop_on_breakdown) throw NumericalError("conjugate gradient: operator is not positive definite");
      res.breakdown = true;
      break;
    }
    const double alpha = rr / dad;
    x += alpha * d;
    r += alpha * ad;
    const double rr_new = dot(r, r);
    d = -r + (rr_new / rr) * d;
    rr = rr_new;
    ++res.iterations;
    record();
  }
  res.converged = res.residual <= tol;
  return res;
}

struct HumReport {
  double control_cost = 0.0;
  double terminal_norm = 0.0;
  int cg_iterations = 0;
  bool converged = true;
  double cg_residual = 0.0;
  CgTrace trace;
  double cost_exponent = 0.0;
  double bound_ratio = 0.0;
  double data_norm = 0.0;
  double epsilon = 0.0;
  // optimality identity: cost + terminal/ε against the data pairing
  double identity_lhs = 0.0;
  double identity_rhs = 0.0;
  double identity_residual = 0.0;
};

struct DualValue {
  double value = 0.0;
  Eigen::MatrixXd gradient;
};

namespace internal {

// Controls produced by terminal adjoint data zT: u = 1_{G0}·z, v = Z.
struct ForwardControls {
  AdaptedField u, v;
  BackwardSolution adjoint;
};

inline ForwardControls forward_controls(const SpdeProblem& p, const Eigen::MatrixXd& zT) {
  ForwardControls c;
  c.adjoint = backward_solve(p, zT, BackwardMode::kAdjoint13);
  const int M = p.tree().steps();
  c.u = AdaptedField(p.tree(), p.n_space());
  c.v = AdaptedField(p.tree(), p.n_space());
  c.u.values.leftCols(p.tree().offset(M)) =
      (p.grid().chi0.asDiagonal() * c.adjoint.z_mean.values.leftCols(p.tree().offset(M)));
  c.v.values.leftCols(p.tree().offset(M)) = c.adjoint.Z.values.leftCols(p.tree().offset(M));
  return c;
}

inline double control_norm(const SpdeProblem& p, const AdaptedField& u, const AdaptedField* v) {
  double cost = qt_integral_squared(p.tree(), p.grid(), u, Region::kG0);
  if (v) cost += qt_integral_squared(p.tree(), p.grid(), *v);
  return cost;
}

inline void check_value(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + " is not finite");
}

inline void finish_report(HumReport& r, const CgResult& cg, const HumConfig& cfg, double exponent,
                          double pairing) {
  r.cg_iterations = cg.iterations;
  r.converged = cg.converged;
  r.cg_residual = cg.residual;
  r.trace = cg.trace;
  r.cost_exponent = exponent;
  r.epsilon = cfg.epsilon;
  r.identity_lhs = r.control_cost + r.terminal_norm / cfg.epsilon;
  r.identity_rhs = pairing;
  const double scale = std::abs(r.identity_lhs) + std::abs(r.identity_rhs);
  r.identity_residual = scale > 0 ? std::abs(r.identity_lhs - r.identity_rhs) / scale : 0.0;
  const double denom = std::exp(cfg.cost_constant * exponent) * r.data_norm;
  r.bound_ratio = denom > 0 ? r.control_cost / denom : 0.0;
  check_value(r.bound_ratio, "bound ratio");
}

}  // namespace internal

/// J(zT) = ½E∫∫_{Q0} z² + ½E∫∫ Z² + (ε/2)E‖zT‖² + ⟨y0, z(0)⟩; the gradient in the
/// leaf inner product is y(T) + ε·zT with y driven by u = 1_{G0}z, v = Z.
inline DualValue dual_functional(const SpdeProblem& p, const Eigen::VectorXd& y0, double epsilon,
                                 const Eigen::MatrixXd& zT) {
  internal::require(epsilon > 0, "epsilon must be positive");
  const ScenarioTree& tree = p.tree();
  const SpatialGrid& grid = p.grid();
  const internal::ForwardControls c = internal::forward_controls(p, zT);
  const bool noisy = !tree.collapsed();
  DualValue out;
  out.value = 0.5 * internal::control_norm(p, c.u, noisy ? &c.v : nullptr) +
              0.5 * epsilon * leaf_inner(tree, grid, zT, zT) + grid.inner(y0, c.adjoint.root());
  internal::check_value(out.value, "dual functional");
  const ForwardSolution y = forward_solve(p, y0, {&c.u, noisy ? &c.v : nullptr, nullptr, nullptr});
  out.gradient = y.leaves(tree) + epsilon * zT;
  return out;
}

struct ForwardHumResult {
  AdaptedField u, v;
  ForwardSolution y;
  Eigen::MatrixXd zT;
  HumReport report;
};

/// Penalized null control of the forward equation with controls (u, v).
/// At the optimum y(T) = -ε·zT and cost + E‖y(T)‖²/ε = -⟨y0, z(0)⟩.
inline ForwardHumResult hum_forward(const SpdeProblem& p, const Eigen::VectorXd& y0, const HumConfig& cfg) {
  cfg.validate();
  const ScenarioTree& tree = p.tree();
  const SpatialGrid& grid = p.grid();
  internal::require(y0.size() == grid.N, "initial datum has wrong length");
  const bool noisy = !tree.collapsed();

  auto gramian = [&](const Eigen::MatrixXd& zT) -> Eigen::MatrixXd {
    const internal::ForwardControls c = internal::forward_controls(p, zT);
    const ForwardSolution y =
        forward_solve(p, Eigen::VectorXd::Zero(grid.N), {&c.u, noisy ? &c.v : nullptr, nullptr, nullptr});
    return y.leaves(tree) + cfg.epsilon * zT;
  };
  auto dot = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return leaf_inner(tree, grid, a, b); };

  const Eigen::MatrixXd b = forward_solve(p, y0).leaves(tree);
  ForwardHumResult out;
  out.zT = Eigen::MatrixXd::Zero(grid.N, tree.leaf_count());
  const CgResult cg = conjugate_gradient(out.zT, b, gramian, dot, cfg.cg_tol, cfg.cg_max_iter);

  const internal::ForwardControls c = internal::forward_controls(p, out.zT);
  out.u = c.u;
  out.v = noisy ? c.v : AdaptedField(tree, grid.N);
  out.y = forward_solve(p, y0, {&out.u, noisy ? &out.v : nullptr, nullptr, nullptr});
  HumReport& r = out.report;
  r.control_cost = internal::control_norm(p, out.u, &out.v);
  const Eigen::MatrixXd yT = out.y.leaves(tree);
  r.terminal_norm = leaf_inner(tree, grid, yT, yT);
  r.data_norm = grid.norm2(y0);
  internal::check_value(r.control_cost, "control cost");
  internal::check_value(r.terminal_norm, "terminal norm");
  internal::finish_report(r, cg, cfg, k_cost_exponent(p), -grid.inner(y0, c.adjoint.root()));
  return out;
}

struct BackwardHumResult {
  AdaptedField u;
  BackwardSolution y;
  Eigen::VectorXd z0;
  HumReport report;
};

/// Penalized null control of the backward equation with the single control u.
/// The dual variable is the initial datum z0 of the forward adjoint; u = 1_{G0}z.
/// At the optimum y(0) = ε·z0 and cost + ‖y(0)‖²/ε = E⟨yT, z(T)⟩.
inline BackwardHumResult hum_backward(const SpdeProblem& p, const Eigen::MatrixXd& yT, const HumConfig& cfg) {
  cfg.validate();
  const ScenarioTree& tree = p.tree();
  const SpatialGrid& grid = p.grid();
  internal::require(yT.rows() == grid.N && yT.cols() == tree.leaf_count(),
                    "terminal datum must have one column per leaf");
  const int M = tree.steps();

  auto control_of = [&](const ForwardSolution& z) {
    AdaptedField u(tree, grid.N);
    u.values.leftCols(tree.offset(M)) = grid.chi0.asDiagonal() * z.y.values.leftCols(tree.offset(M));
    return u;
  };
  const Eigen::MatrixXd zero_leaves = Eigen::MatrixXd::Zero(grid.N, tree.leaf_count());
  auto gramian = [&](const Eigen::VectorXd& z0) -> Eigen::VectorXd {
    const AdaptedField u = control_of(forward_solve(p, z0, {}, ForwardMode::kAdjoint15));
    const BackwardSolution y = backward_solve(p, zero_leaves, BackwardMode::kControlled12, {&u});
    return cfg.epsilon * z0 - y.root();
  };
  auto dot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return grid.inner(a, b); };

  const Eigen::VectorXd b = -backward_solve(p, yT, BackwardMode::kControlled12).root();
  BackwardHumResult out;
  out.z0 = Eigen::VectorXd::Zero(grid.N);
  const CgResult cg = conjugate_gradient(out.z0, b, gramian, dot, cfg.cg_tol, cfg.cg_max_iter);

  const ForwardSolution z = forward_solve(p, out.z0, {}, ForwardMode::kAdjoint15);
  out.u = control_of(z);
  out.y = backward_solve(p, yT, BackwardMode::kControlled12, {&out.u});
  HumReport& r = out.report;
  r.control_cost = internal::control_norm(p, out.u, nullptr);
  r.terminal_norm = grid.norm2(out.y.root());
  r.data_norm = leaf_inner(tree, grid, yT, yT);
  internal::check_value(r.control_cost, "control cost");
  internal::check_value(r.terminal_norm, "initial-time norm");
  internal::finish_report(r, cg, cfg, m_cost_exponent(p), leaf_inner(tree, grid, yT, z.leaves(tree)));
  return out;
}

}  // namespace stochnull
