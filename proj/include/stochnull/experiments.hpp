#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochnull/coefficients.hpp"
#include "stochnull/control.hpp"
#include "stochnull/errors.hpp"
#include "stochnull/spde.hpp"

namespace stochnull {

/// kBackward13: sup |z(0)|² / (E∫∫_{Q0} z² + E∫∫ Z²) over terminal data of the backward adjoint.
/// kForward15: sup E|z(T)|² / E∫∫_{Q0} z² over initial data of the forward adjoint.
enum class ObservabilityDirection { kBackward13, kForward15 };

inline const char* to_string(ObservabilityDirection d) {
  return d == ObservabilityDirection::kBackward13 ? "backward_1_3" : "forward_1_5";
}

struct ObservabilityEstimate {
  double c_obs = 0.0;
  int iterations = 0;
  double residual = 0.0;  // relative change of the last two quotients
  std::vector<double> history;
  std::string method;     // "factored" or "krylov"
  int inner_iterations = 0;
  int inner_breakdowns = 0;
  bool reseeded = false;
  bool flagged = false;  // observation form vanished on a nonzero iterate
};

struct PowerIterationOptions {
  int iters = 30;
  unsigned seed = 1;
  // dual dimension × observation rows up to which the operators are assembled
  std::size_t dense_limit = std::size_t(1) << 23;
  double inner_tol = 1e-10;
  int inner_max_iter = 2000;
};

namespace internal {

template <typename Vec>
bool is_zero(const Vec& v) {
  return v.size() == 0 || v.cwiseAbs().maxCoeff() == 0.0;
}

/// Both quadratic forms as weighted stacks, ‖obs(x)‖² and ‖num(x)‖², over a flat dual vector.
struct ObservabilityForms {
  int dual_dim = 0;
  int obs_rows = 0;
  int num_rows = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> obs, num;
};

inline ObservabilityForms observability_forms(const SpdeProblem& p, ObservabilityDirection direction) {
  const ScenarioTree& tree = p.tree();
  const SpatialGrid& grid = p.grid();
  const int M = tree.steps(), N = grid.N, ng0 = grid.g0_count();
  const bool noisy = !tree.collapsed();
  const int interior_nodes = tree.offset(M);
  ObservabilityForms f;
  if (direction == ObservabilityDirection::kForward15) {
    f.dual_dim = N;
    f.obs_rows = interior_nodes * ng0;
    f.num_rows = tree.leaf_count() * N;
    auto solve = [&p](const Eigen::VectorXd& z0) { return forward_solve(p, z0, {}, ForwardMode::kAdjoint15); };
    f.obs = [&p, solve, M, ng0, interior_nodes](const Eigen::VectorXd& z0) {
      const ScenarioTree& tree = p.tree();
      const SpatialGrid& grid = p.grid();
      const ForwardSolution z = solve(z0);
      Eigen::VectorXd out(interior_nodes * ng0);
      int r = 0;
      for (int n = 0; n < M; ++n) {
        const double w = std::sqrt(tree.dt() * tree.weight(n) * grid.h);
        for (int k = 0; k < tree.nodes_at(n); ++k) {
          const auto col = z.y.col(tree.index(n, k));
          for (int i = 0; i < grid.N; ++i)
            if (grid.g0_mask[i]) out[r++] = w * col[i];
        }
      }
      return out;
    };
    f.num = [&p, solve, M](const Eigen::VectorXd& z0) {
      const double w = std::sqrt(p.tree().weight(M) * p.grid().h);
      const Eigen::MatrixXd leaves = solve(z0).leaves(p.tree());
      return Eigen::VectorXd(w * leaves.reshaped());
    };
    return f;
  }
  f.dual_dim = N * tree.leaf_count();
  f.obs_rows = interior_nodes * (ng0 + (noisy ? N : 0));
  f.num_rows = N;
  f.obs = [&p, M, ng0, N, noisy, interior_nodes](const Eigen::VectorXd& flat) {
    const ScenarioTree& tree = p.tree();
    const SpatialGrid& grid = p.grid();
    const Eigen::MatrixXd zT = flat.reshaped(N, tree.leaf_count());
    const BackwardSolution z = backward_solve(p, zT, BackwardMode::kAdjoint13);
    Eigen::VectorXd out(interior_nodes * (ng0 + (noisy ? N : 0)));
    int r = 0;
    for (int n = 0; n < M; ++n) {
      const double w = std::sqrt(tree.dt() * tree.weight(n) * grid.h);
      for (int k = 0; k < tree.nodes_at(n); ++k) {
        const int idx = tree.index(n, k);
        for (int i = 0; i < N; ++i)
          if (grid.g0_mask[i]) out[r++] = w * z.z_mean.values(i, idx);
        if (noisy)
          for (int i = 0; i < N; ++i) out[r++] = w * z.Z.values(i, idx);
      }
    }
    return out;
  };
  f.num = [&p, N](const Eigen::VectorXd& flat) {
    const Eigen::MatrixXd zT = flat.reshaped(N, p.tree().leaf_count());
    return Eigen::VectorXd(std::sqrt(p.grid().h) * backward_solve(p, zT, BackwardMode::kAdjoint13).root());
  };
  return f;
}

/// Power iteration on CᵀC, C = F R⁻¹ with O = QR: the pencil (FᵀF, OᵀO) in
/// square-root form, so the conditioning is that of O rather than OᵀO.
inline ObservabilityEstimate factored_power_iteration(const ObservabilityForms& f, Eigen::VectorXd x,
                                                      const std::function<Eigen::VectorXd()>& draw,
                                                      const PowerIterationOptions& opt) {
  ObservabilityEstimate est;
  est.method = "factored";
  if (f.obs_rows < f.dual_dim) {
    est.flagged = true;
    return est;
  }
  Eigen::MatrixXd O(f.obs_rows, f.dual_dim), F(f.num_rows, f.dual_dim);
  for (int j = 0; j < f.dual_dim; ++j) {
    const Eigen::VectorXd e = Eigen::VectorXd::Unit(f.dual_dim, j);
    O.col(j) = f.obs(e);
    F.col(j) = f.num(e);
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(O);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(f.dual_dim).triangularView<Eigen::Upper>();
  if (!(R.diagonal().cwiseAbs().minCoeff() > 0)) {
    est.flagged = true;
    return est;
  }
  // Cᵀ = R⁻ᵀ Fᵀ
  const Eigen::MatrixXd Ct = R.transpose().triangularView<Eigen::Lower>().solve(F.transpose());
  if (!Ct.allFinite()) throw NumericalError("observability: non-finite factored operator");
  Eigen::VectorXd w = R * x;
  Eigen::VectorXd cw = Ct.transpose() * w;
  for (int attempt = 0; is_zero(w) || is_zero(cw); ++attempt) {
    if (attempt == 8) throw NumericalError("observability: energy form vanishes on every seed");
    x = draw();
    est.reseeded = true;
    w = R * x;
    cw = Ct.transpose() * w;
  }
  double rho = cw.squaredNorm() / w.squaredNorm();
  est.history.push_back(rho);
  for (int k = 0; k < opt.iters; ++k) {
    w = Ct * cw;
    const double norm = w.norm();
    if (norm == 0.0) break;
    w /= norm;
    cw = Ct.transpose() * w;
    const double next = cw.squaredNorm();
    est.residual = std::abs(next - rho) / next;
    rho = next;
    est.history.push_back(rho);
    ++est.iterations;
  }
  est.c_obs = rho;
  if (!std::isfinite(est.c_obs)) throw NumericalError("observability: non-finite quotient");
  return est;
}

/// Matrix-free variant: x <- Dop⁻¹ Nop x, Dop inverted by conjugate gradients
/// started from zero. Accurate only while the observation form is well conditioned.
template <typename Vec, typename NApply, typename DApply, typename Dot, typename Draw>
ObservabilityEstimate krylov_power_iteration(Vec x, NApply&& nop, DApply&& dop, Dot&& dot, Draw&& draw,
                                             const PowerIterationOptions& opt) {
  ObservabilityEstimate est;
  est.method = "krylov";
  Vec nx = x * 0.0;
  if (is_zero(x) || is_zero(nx = nop(x))) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      x = draw();
      est.reseeded = true;
      nx = nop(x);
      if (!is_zero(nx)) break;
    }
    if (is_zero(nx)) throw NumericalError("observability: energy form vanishes on every seed");
  }
  auto quotient = [&](const Vec& v, const Vec& nv, double& obs) {
    obs = dot(v, dop(v));
    if (!(obs > 0)) return -1.0;
    return dot(v, nv) / obs;
  };
  double obs = 0;
  double rho = quotient(x, nx, obs);
  if (rho < 0) {
    est.flagged = true;
    return est;
  }
  x /= std::sqrt(obs);
  nx /= std::sqrt(obs);
  est.history.push_back(rho);
  for (int k = 0; k < opt.iters; ++k) {
    Vec y = x * 0.0;
    const Vec rhs = -nx;
    const CgResult cg = conjugate_gradient(y, rhs, dop, dot, opt.inner_tol, opt.inner_max_iter, true);
    est.inner_iterations += cg.iterations;
    if (cg.breakdown) ++est.inner_breakdowns;
    const Vec ny = nop(y);
    const double next = quotient(y, ny, obs);
    if (next < 0) {
      est.flagged = true;
      break;
    }
    x = y / std::sqrt(obs);
    nx = ny / std::sqrt(obs);
    est.residual = std::abs(next - rho) / next;
    rho = next;
    est.history.push_back(rho);
    ++est.iterations;
  }
  est.c_obs = rho;
  if (!std::isfinite(est.c_obs)) throw NumericalError("observability: non-finite quotient");
  return est;
}

}  // namespace internal

/// Dominant generalized Rayleigh quotient of (energy, observation). The operators
/// are assembled and factored when small enough, otherwise applied matrix-free.
inline ObservabilityEstimate observability_constant(const SpdeProblem& p, ObservabilityDirection direction,
                                                    const PowerIterationOptions& opt = {},
                                                    const Eigen::MatrixXd* initial = nullptr) {
  internal::require(opt.iters >= 5, "power iteration needs at least 5 iterations");
  const ScenarioTree& tree = p.tree();
  const SpatialGrid& grid = p.grid();
  const int M = tree.steps();
  const internal::ObservabilityForms forms = internal::observability_forms(p, direction);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> nd;
  auto draw = [&]() {
    Eigen::VectorXd v(forms.dual_dim);
    for (int i = 0; i < forms.dual_dim; ++i) v[i] = nd(rng);
    return v;
  };
  Eigen::VectorXd x;
  if (initial) {
    internal::require(initial->size() == forms.dual_dim,
                      direction == ObservabilityDirection::kForward15 ? "initial iterate must be a nodal vector"
                                                                      : "initial iterate must be leaf data");
    x = initial->reshaped();
  } else {
    x = draw();
  }

  const std::size_t dense = static_cast<std::size_t>(forms.dual_dim) *
                            static_cast<std::size_t>(std::max(forms.obs_rows, forms.num_rows));
  if (dense <= opt.dense_limit) return internal::factored_power_iteration(forms, x, draw, opt);

  if (direction == ObservabilityDirection::kBackward13) {
    const bool noisy = !tree.collapsed();
    const int leaves = tree.leaf_count();
    auto nop = [&](const Eigen::VectorXd& flat) -> Eigen::VectorXd {
      const Eigen::MatrixXd zT = flat.reshaped(grid.N, leaves);
      const Eigen::VectorXd z0 = backward_solve(p, zT, BackwardMode::kAdjoint13).root();
      return forward_solve(p, z0).leaves(tree).reshaped();
    };
    auto dop = [&](const Eigen::VectorXd& flat) -> Eigen::VectorXd {
      const internal::ForwardControls c = internal::forward_controls(p, flat.reshaped(grid.N, leaves));
      return forward_solve(p, Eigen::VectorXd::Zero(grid.N), {&c.u, noisy ? &c.v : nullptr, nullptr, nullptr})
          .leaves(tree)
          .reshaped();
    };
    auto dot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
      return leaf_inner(tree, grid, a.reshaped(grid.N, leaves), b.reshaped(grid.N, leaves));
    };
    return internal::krylov_power_iteration(x, nop, dop, dot, draw, opt);
  }
  auto nop = [&](const Eigen::VectorXd& z0) -> Eigen::VectorXd {
    const Eigen::MatrixXd zT = forward_solve(p, z0, {}, ForwardMode::kAdjoint15).leaves(tree);
    return backward_solve(p, zT, BackwardMode::kControlled12).root();
  };
  const Eigen::MatrixXd zero_leaves = Eigen::MatrixXd::Zero(grid.N, tree.leaf_count());
  auto dop = [&](const Eigen::VectorXd& z0) -> Eigen::VectorXd {
    const ForwardSolution z = forward_solve(p, z0, {}, ForwardMode::kAdjoint15);
    AdaptedField u(tree, grid.N);
    u.values.leftCols(tree.offset(M)) = grid.chi0.asDiagonal() * z.y.values.leftCols(tree.offset(M));
    return -backward_solve(p, zero_leaves, BackwardMode::kControlled12, {&u}).root();
  };
  auto dot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return grid.inner(a, b); };
  return internal::krylov_power_iteration(x, nop, dop, dot, draw, opt);
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  internal::require(x.size() == y.size() && x.size() >= 2, "line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  internal::require(sxx > 0, "line fit needs distinct abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += r * r;
  }
  f.r2 = syy > 0 ? 1 - ss_res / syy : 1.0;
  return f;
}

enum class ScalingQuantity { kObservability, kControlCost };

struct ScalingSetup {
  double L = 1.0;
  int N = 32;
  Interval g0{0.25, 0.75};
  Interval g1{0.4, 0.6};
  CoefficientFunctions coefficients;
  DiffusionScheme scheme = DiffusionScheme::kSdirk2;
  std::vector<double> horizons{0.25, 0.5, 1.0, 2.0};
  double steps_per_unit_time = 128.0;
  int max_steps = 16;
  bool collapse_deterministic = true;
  ScalingQuantity quantity = ScalingQuantity::kObservability;
  ObservabilityDirection direction = ObservabilityDirection::kForward15;
  PowerIterationOptions power;
  HumConfig hum;
  bool epsilon_from_mesh = true;  // ε = h²
  std::optional<ScalarField> initial;  // default sin(πx/L)
};

struct ScalingRow {
  double T = 0.0;
  int steps = 0;
  bool collapsed = false;
  double value = 0.0;
  double exponent = 0.0;  // K for forward problems, M for backward ones
  int iterations = 0;
  bool flagged = false;
};

struct ScalingTable {
  std::vector<ScalingRow> rows;
  LinearFit fit;     // log(value) against 1/T
  LinearFit fit_t4;  // log(value) against T⁻⁴, for comparison only
  bool complete = false;
  bool steps_ratio_exact = true;  // M/T identical on every row
  std::string error;
};

namespace internal {

inline bool has_noise(const ProblemCoefficients& c, ObservabilityDirection d, ScalingQuantity q) {
  if (q == ScalingQuantity::kControlCost || d == ObservabilityDirection::kBackward13) return true;
  return c.sup_a2 != 0.0;
}

inline void fit_table(ScalingTable& t) {
  std::vector<double> inv, inv4, logv;
  for (const ScalingRow& r : t.rows) {
    inv.push_back(1 / r.T);
    inv4.push_back(std::pow(r.T, -4));
    logv.push_back(std::log(r.value));
  }
  t.fit = fit_line(inv, logv);
  t.fit_t4 = fit_line(inv4, logv);
}

}  // namespace internal

/// One row per horizon with M·T⁻¹ held fixed; rows are sorted by T. A numerical
/// failure stops the sweep and returns the rows computed so far.
inline ScalingTable cost_scaling_sweep(const ScalingSetup& s) {
  std::vector<double> horizons = s.horizons;
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());
  internal::require(horizons.size() >= 4, "the scaling sweep needs at least 4 distinct horizons");
  internal::require(horizons.front() > 0, "horizons must be positive");
  internal::require(s.steps_per_unit_time > 0, "steps per unit time must be positive");

  ScalingTable table;
  const SpatialGrid grid = build_grid(s.L, s.N, s.g0, s.g1);
  const Eigen::VectorXd y0 = [&] {
    Eigen::VectorXd v(grid.N);
    for (int i = 0; i < grid.N; ++i)
      v[i] = s.initial ? (*s.initial)(0.0, grid.x[i]) : std::sin(M_PI * grid.x[i] / s.L);
    return v;
  }();
  for (double T : horizons) {
    const double exact = s.steps_per_unit_time * T;
    const int M = std::max(1, static_cast<int>(std::lround(exact)));
    if (std::abs(exact - M) > 1e-9) table.steps_ratio_exact = false;
    try {
      ScenarioTree probe = ScenarioTree::collapsed(M, T);
      const ProblemCoefficients coeffs = sample_coefficients(grid, probe, s.coefficients);
      const bool collapse = s.collapse_deterministic && !internal::has_noise(coeffs, s.direction, s.quantity);
      if (!collapse && M > s.max_steps) {
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "T = %g needs M = %d steps on a noisy tree, above max_steps = %d; lower the steps per "
                      "unit time or remove the noise terms",
                      T, M, s.max_steps);
        throw ValidationError(buf);
      }
      const ScenarioTree tree = collapse ? probe : ScenarioTree::binary(M, T, s.max_steps);
      const SpdeProblem p(grid, tree, collapse ? coeffs : sample_coefficients(grid, tree, s.coefficients),
                          s.scheme);
      ScalingRow row;
      row.T = T;
      row.steps = M;
      row.collapsed = collapse;
      if (s.quantity == ScalingQuantity::kObservability) {
        const ObservabilityEstimate e = observability_constant(p, s.direction, s.power);
        if (e.flagged) throw NumericalError("observation form vanished at T = " + std::to_string(T));
        row.value = e.c_obs;
        row.iterations = e.iterations;
        row.exponent = s.direction == ObservabilityDirection::kBackward13 ? k_cost_exponent(p) : m_cost_exponent(p);
      } else {
        HumConfig cfg = s.hum;
        if (s.epsilon_from_mesh) cfg.epsilon = default_epsilon(grid);
        const ForwardHumResult r = hum_forward(p, y0, cfg);
        row.value = r.report.control_cost;
        row.iterations = r.report.cg_iterations;
        row.flagged = !r.report.converged;
        row.exponent = r.report.cost_exponent;
      }
      if (!(row.value > 0) || !std::isfinite(row.value))
        throw NumericalError("non-positive or non-finite value at T = " + std::to_string(T));
      table.rows.push_back(row);
    } catch (const NumericalError& e) {
      table.error = e.what();
      return table;
    }
  }
  internal::fit_table(table);
  table.complete = true;
  return table;
}

enum class HumDirection { kForward, kBackward };

struct EpsilonRow {
  double epsilon = 0.0;
  double terminal_norm = 0.0;
  double control_cost = 0.0;
  int iterations = 0;
  bool converged = true;
  double identity_residual = 0.0;
};

struct EpsilonTable {
  std::vector<EpsilonRow> rows;
  double uncontrolled_norm = 0.0;
  double cost_exponent = 0.0;
  bool terminal_decreasing = false;
  double cost_variation = 0.0;  // max/min control cost
};

/// data: the initial datum (N x 1) for kForward, leaf data for kBackward.
inline EpsilonTable epsilon_sweep(const SpdeProblem& p, HumDirection direction, const Eigen::MatrixXd& data,
                                  const std::vector<double>& epsilons, const HumConfig& base = {}) {
  internal::require(epsilons.size() >= 3, "the epsilon sweep needs at least 3 values");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    internal::require(epsilons[i] > 0, "epsilon values must be positive");
    if (i > 0) internal::require(epsilons[i] < epsilons[i - 1], "epsilon values must be strictly decreasing");
  }
  const ScenarioTree& tree = p.tree();
  const SpatialGrid& grid = p.grid();
  EpsilonTable t;
  if (direction == HumDirection::kForward) {
    internal::require(data.rows() == grid.N && data.cols() == 1, "forward sweep needs a nodal initial datum");
    const Eigen::MatrixXd free = forward_solve(p, data.col(0)).leaves(tree);
    t.uncontrolled_norm = leaf_inner(tree, grid, free, free);
  } else {
    t.uncontrolled_norm = grid.norm2(backward_solve(p, data, BackwardMode::kControlled12).root());
  }
  for (double eps : epsilons) {
    HumConfig cfg = base;
    cfg.epsilon = eps;
    HumReport r = direction == HumDirection::kForward ? hum_forward(p, data.col(0), cfg).report
                                                      : hum_backward(p, data, cfg).report;
    t.rows.push_back({eps, r.terminal_norm, r.control_cost, r.cg_iterations, r.converged, r.identity_residual});
    t.cost_exponent = r.cost_exponent;
  }
  t.terminal_decreasing = true;
  double lo = t.rows[0].control_cost, hi = lo;
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    if (!(t.rows[i].terminal_norm < t.rows[i - 1].terminal_norm)) t.terminal_decreasing = false;
    lo = std::min(lo, t.rows[i].control_cost);
    hi = std::max(hi, t.rows[i].control_cost);
  }
  t.cost_variation = lo > 0 ? hi / lo : INFINITY;
  return t;
}

}  // namespace stochnull
