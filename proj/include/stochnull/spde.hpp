#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stochnull/coefficients.hpp"
#include "stochnull/errors.hpp"
#include "stochnull/grid.hpp"
#include "stochnull/scenario.hpp"

namespace stochnull {

/// Implicit treatment of the diffusion over one step.
///  kSdirk2: two-stage L-stable SDIRK, R(z) = (1 + (1-2γ)z) / (1 - γz)², γ = 1 - 1/√2
///  kBackwardEuler: R(z) = 1 / (1 - z)
enum class DiffusionScheme { kSdirk2, kBackwardEuler };

/// Grid, tree, sampled coefficients and the per-step diffusion propagators
/// K_n = R(Δt·E(t_{n+1})). K_n is symmetric, so the same routine serves the
/// forward stepper and its transpose.
class SpdeProblem {
 public:
  static constexpr double kGamma = 1.0 - 0.70710678118654752440;

  SpdeProblem(SpatialGrid grid, ScenarioTree tree, ProblemCoefficients coeffs,
              DiffusionScheme scheme = DiffusionScheme::kSdirk2)
      : grid_(std::move(grid)), tree_(tree), coeffs_(std::move(coeffs)), scheme_(scheme) {
    if (coeffs_.a_mid.cols() != tree_.steps() + 1 || coeffs_.a_mid.rows() != grid_.N + 1 ||
        coeffs_.a1.rows() != grid_.N)
      throw ValidationError("coefficients are not sampled on this grid and tree");
    const double dt = tree_.dt();
    const double g = scheme_ == DiffusionScheme::kSdirk2 ? kGamma : 1.0;
    for (int n = 0; n < tree_.steps(); ++n) {
      elliptic_.push_back(assemble_elliptic(grid_, coeffs_.a_mid.col(n + 1)));
      implicit_.emplace_back(elliptic_.back().shifted(1.0, -g * dt));
    }
  }

  const SpatialGrid& grid() const { return grid_; }
  const ScenarioTree& tree() const { return tree_; }
  const ProblemCoefficients& coeffs() const { return coeffs_; }
  DiffusionScheme scheme() const { return scheme_; }
  int n_space() const { return grid_.N; }

  /// K_step v
  Eigen::VectorXd propagate(int step, const Eigen::Ref<const Eigen::VectorXd>& v) const {
    const TridiagonalSolver& j = implicit_[step];
    if (scheme_ == DiffusionScheme::kBackwardEuler) return j.solve(v);
    const Eigen::VectorXd k1 = j.solve(v);
    const Eigen::VectorXd rhs = v + ((1.0 - kGamma) * tree_.dt()) * elliptic_[step].apply(k1);
    return j.solve(rhs);
  }

  const TridiagonalOperator& elliptic(int step) const { return elliptic_[step]; }

  /// Δt (|B1|²/β + |a1|); values above 1 mark the explicit lower-order terms as loosely resolved.
  double cfl_number() const {
    return tree_.dt() * (coeffs_.sup_b1 * coeffs_.sup_b1 / coeffs_.beta + coeffs_.sup_a1);
  }

  /// Same problem with a1 = a2 = B1 = B2 = B = 0.
  SpdeProblem without_potentials() const {
    ProblemCoefficients c = coeffs_;
    c.a1.setZero();
    c.a2.setZero();
    c.b1.setZero();
    c.b2.setZero();
    c.b.setZero();
    c.refresh_norms();
    return SpdeProblem(grid_, tree_, std::move(c), scheme_);
  }

  /// Same problem on the single-path tree.
  SpdeProblem collapsed() const {
    return SpdeProblem(grid_, ScenarioTree::collapsed(tree_.steps(), tree_.horizon()), coeffs_, scheme_);
  }

 private:
  SpatialGrid grid_;
  ScenarioTree tree_;
  ProblemCoefficients coeffs_;
  DiffusionScheme scheme_;
  std::vector<TridiagonalOperator> elliptic_;
  std::vector<TridiagonalSolver> implicit_;
};

/// Optional adapted sources of the forward stepper. Null means zero.
struct ForwardSources {
  const AdaptedField* u = nullptr;      // control, acts through 1_{G0}
  const AdaptedField* v = nullptr;      // added to the noise coefficient
  const AdaptedField* f0 = nullptr;     // added to the drift
  const AdaptedField* f_div = nullptr;  // drift in weak-divergence form
};

/// kGeneral: dy - (a y_x)_x dt = (a1 y + B1 y_x + sources) dt + (a2 y + B2 y_x + v) dW
/// kAdjoint15: dz - (a z_x)_x dt = (-a1 z + (B z)_x + sources) dt + (-a2 z + v) dW
enum class ForwardMode { kGeneral, kAdjoint15 };

struct ForwardSolution {
  AdaptedField y;
  bool cfl_warning = false;

  Eigen::MatrixXd leaves(const ScenarioTree& tree) const { return y.level(tree, tree.steps()); }
};

namespace internal {

inline void check_source(const AdaptedField* f, const SpdeProblem& p, const char* name) {
  if (!f) return;
  if (f->values.rows() != p.n_space() || f->values.cols() != p.tree().node_count())
    throw ValidationError(std::string("source ") + name + " does not match grid and tree");
}

inline void check_finite(const AdaptedField& f, const ScenarioTree& tree, int level, const char* what) {
  if (!f.level(tree, level).allFinite())
    throw NumericalError(std::string(what) + ": non-finite value at level " + std::to_string(level));
}

}  // namespace internal

inline ForwardSolution forward_solve(const SpdeProblem& p, const Eigen::Ref<const Eigen::VectorXd>& y0,
                                     const ForwardSources& src = {},
                                     ForwardMode mode = ForwardMode::kGeneral) {
  const SpatialGrid& grid = p.grid();
  const ScenarioTree& tree = p.tree();
  const ProblemCoefficients& c = p.coeffs();
  if (y0.size() != grid.N) throw ValidationError("initial datum has wrong length");
  if (!y0.allFinite()) throw ValidationError("initial datum is not finite");
  internal::check_source(src.u, p, "u");
  internal::check_source(src.v, p, "v");
  internal::check_source(src.f0, p, "f0");
  internal::check_source(src.f_div, p, "f_div");

  const double dt = tree.dt();
  const double sdt = tree.sqrt_dt();
  ForwardSolution out;
  out.cfl_warning = p.cfl_number() > 1.0;
  out.y = AdaptedField(tree, grid.N);
  out.y.col(0) = y0;

  Eigen::VectorXd drift(grid.N), noise(grid.N);
  for (int n = 0; n < tree.steps(); ++n) {
    const auto a1 = c.a1.col(n).array();
    const auto a2 = c.a2.col(n).array();
    for (int k = 0; k < tree.nodes_at(n); ++k) {
      const int idx = tree.index(n, k);
      const Eigen::VectorXd y = out.y.col(idx);
      if (mode == ForwardMode::kGeneral) {
        const Eigen::VectorXd dy = gradient(grid, y);
        drift = (a1 * y.array() + c.b1.col(n).array() * dy.array()).matrix();
        noise = (a2 * y.array() + c.b2.col(n).array() * dy.array()).matrix();
      } else {
        drift = -(a1 * y.array()).matrix() +
                weak_divergence(grid, (c.b.col(n).array() * y.array()).matrix());
        noise = -(a2 * y.array()).matrix();
      }
      if (src.u) drift.array() += grid.chi0.array() * src.u->col(idx).array();
      if (src.f0) drift += src.f0->col(idx);
      if (src.f_div) drift += weak_divergence(grid, src.f_div->col(idx));
      if (src.v) noise += src.v->col(idx);

      const Eigen::VectorXd base = y + dt * drift;
      if (tree.collapsed()) {
        out.y.col(tree.child_plus(n, k)) = p.propagate(n, base);
      } else {
        out.y.col(tree.child_plus(n, k)) = p.propagate(n, base + sdt * noise);
        out.y.col(tree.child_minus(n, k)) = p.propagate(n, base - sdt * noise);
      }
    }
    internal::check_finite(out.y, tree, n + 1, "forward_solve");
  }
  return out;
}

/// kGeneric: dz + (a z_x)_x dt = (sources) dt + Z dW
/// kAdjoint13: dz + (a z_x)_x dt = (-a1 z - a2 Z + (B1 z + B2 Z)_x + sources) dt + Z dW
/// kControlled12: dy + (a y_x)_x dt = (a1 y + B y_x + a2 Y + sources) dt + Y dW
enum class BackwardMode { kGeneric, kAdjoint13, kControlled12 };

struct BackwardSources {
  const AdaptedField* u = nullptr;      // control, acts through 1_{G0}
  const AdaptedField* f0 = nullptr;     // drift source
  const AdaptedField* f_div = nullptr;  // drift source in weak-divergence form
};

struct BackwardSolution {
  AdaptedField z;       // levels 0..M
  AdaptedField Z;       // levels 0..M-1
  AdaptedField z_mean;  // E_n[K_n z_{n+1}], levels 0..M-1: pairs with drift sources

  Eigen::VectorXd root() const { return z.col(0); }
};

/// Backward stepper: per node, w± = K_n z_{n+1}^±, m = (w+ + w-)/2,
/// Z = (w+ - w-)/(2√Δt), z_n = m - Δt·drift(m, Z). For kAdjoint13 this is the
/// exact transpose of forward_solve in kGeneral mode; for kControlled12 it is the
/// transpose of kAdjoint15.
inline BackwardSolution backward_solve(const SpdeProblem& p, const Eigen::MatrixXd& terminal,
                                       BackwardMode mode, const BackwardSources& src = {}) {
  const SpatialGrid& grid = p.grid();
  const ScenarioTree& tree = p.tree();
  const ProblemCoefficients& c = p.coeffs();
  if (terminal.rows() != grid.N || terminal.cols() != tree.leaf_count())
    throw ValidationError("terminal data must have one column per leaf");
  if (!terminal.allFinite()) throw ValidationError("terminal data is not finite");
  internal::check_source(src.u, p, "u");
  internal::check_source(src.f0, p, "f0");
  internal::check_source(src.f_div, p, "f_div");

  const int M = tree.steps();
  const double dt = tree.dt();
  BackwardSolution out{AdaptedField(tree, grid.N), AdaptedField(tree, grid.N), AdaptedField(tree, grid.N)};
  out.z.level(tree, M) = terminal;

  Eigen::VectorXd drift(grid.N);
  for (int n = M - 1; n >= 0; --n) {
    const auto a1 = c.a1.col(n).array();
    const auto a2 = c.a2.col(n).array();
    for (int k = 0; k < tree.nodes_at(n); ++k) {
      const int idx = tree.index(n, k);
      Eigen::VectorXd m, zz;
      if (tree.collapsed()) {
        m = p.propagate(n, out.z.col(tree.child_plus(n, k)));
        zz = Eigen::VectorXd::Zero(grid.N);
      } else {
        const Eigen::VectorXd wp = p.propagate(n, out.z.col(tree.child_plus(n, k)));
        const Eigen::VectorXd wm = p.propagate(n, out.z.col(tree.child_minus(n, k)));
        MartingaleSplit s = martingale_part(tree, wp, wm);
        m = std::move(s.mean);
        zz = std::move(s.z);
      }
      switch (mode) {
        case BackwardMode::kGeneric:
          drift.setZero();
          break;
        case BackwardMode::kAdjoint13:
          drift = -(a1 * m.array() + a2 * zz.array()).matrix() +
                  weak_divergence(grid, (c.b1.col(n).array() * m.array() +
                                         c.b2.col(n).array() * zz.array()).matrix());
          break;
        case BackwardMode::kControlled12:
          drift = (a1 * m.array() + c.b.col(n).array() * gradient(grid, m).array() +
                   a2 * zz.array()).matrix();
          break;
      }
      if (src.u) drift.array() += grid.chi0.array() * src.u->col(idx).array();
      if (src.f0) drift += src.f0->col(idx);
      if (src.f_div) drift += weak_divergence(grid, src.f_div->col(idx));
      out.z.col(idx) = m - dt * drift;
      out.Z.col(idx) = zz;
      out.z_mean.col(idx) = m;
    }
    internal::check_finite(out.z, tree, n, "backward_solve");
  }
  return out;
}

/// Relative residual of E⟨y(T), zT⟩ = ⟨y0, z(0)⟩ + E∫∫ 1_{G0} u z + E∫∫ v Z,
/// with y from forward_solve(y0, u, v) and (z, Z) from the adjoint in kAdjoint13 mode.
inline double duality_gap(const SpdeProblem& p, const Eigen::VectorXd& y0, const AdaptedField* u,
                          const AdaptedField* v, const Eigen::MatrixXd& zT) {
  const ForwardSolution fwd = forward_solve(p, y0, {u, v, nullptr, nullptr});
  const BackwardSolution adj = backward_solve(p, zT, BackwardMode::kAdjoint13);
  const double lhs = leaf_inner(p.tree(), p.grid(), fwd.leaves(p.tree()), zT);
  const double t0 = p.grid().inner(y0, adj.root());
  const double tu = u ? qt_inner(p.tree(), p.grid(), *u, adj.z_mean, Region::kG0) : 0.0;
  const double tv = v ? qt_inner(p.tree(), p.grid(), *v, adj.Z) : 0.0;
  const double scale = std::abs(lhs) + std::abs(t0) + std::abs(tu) + std::abs(tv);
  if (scale == 0.0) return 0.0;
  return std::abs(lhs - t0 - tu - tv) / scale;
}

}  // namespace stochnull
