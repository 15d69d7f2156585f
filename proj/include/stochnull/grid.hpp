#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochnull/errors.hpp"

namespace stochnull {

/// Open interval (lo, hi).
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return lo < x && x < hi; }
  double width() const { return hi - lo; }
  double center() const { return 0.5 * (lo + hi); }
  std::string to_string() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "(%g, %g)", lo, hi);
    return buf;
  }
};

/// Uniform mesh of (0, L) with N interior nodes x_j = (j+1)·h, j = 0..N-1,
/// homogeneous Dirichlet data at x = 0 and x = L.
struct SpatialGrid {
  double L = 1.0;
  int N = 0;
  double h = 0.0;
  Eigen::VectorXd x;
  Interval g0, g1;
  std::vector<bool> g0_mask, g1_mask;
  // 0/1 indicator of G0 for cwise products.
  Eigen::VectorXd chi0;

  /// Midpoint abscissae x_{j+1/2} between consecutive nodes, including both
  /// boundary cells: N + 1 entries, the first at h/2.
  Eigen::VectorXd midpoints() const {
    return Eigen::VectorXd::LinSpaced(N + 1, 0.5 * h, L - 0.5 * h);
  }

  int g0_count() const { return static_cast<int>(chi0.sum()); }

  /// h-weighted discrete L2 inner product.
  double inner(const Eigen::Ref<const Eigen::VectorXd>& u,
               const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return h * u.dot(v);
  }
  double norm2(const Eigen::Ref<const Eigen::VectorXd>& u) const { return h * u.squaredNorm(); }
};

inline SpatialGrid build_grid(double L, int N, Interval g0, Interval g1) {
  internal::require(L > 0 && std::isfinite(L), "domain length L must be positive");
  internal::require(N >= 4, "N = " + std::to_string(N) + " is below the minimum of 4 interior nodes");
  internal::require(g0.lo < g0.hi, "g0 " + g0.to_string() + " is empty");
  internal::require(g1.lo < g1.hi, "g1 " + g1.to_string() + " is empty");
  internal::require(g0.lo > 0 && g0.hi < L,
                    "g0 " + g0.to_string() + " touches the boundary of (0, " +
                        std::to_string(L) + ")");
  internal::require(g0.lo < g1.lo && g1.hi < g0.hi,
                    "g1 " + g1.to_string() + " is not strictly contained in g0 " + g0.to_string());

  SpatialGrid g;
  g.L = L;
  g.N = N;
  g.h = L / (N + 1);
  g.g0 = g0;
  g.g1 = g1;
  g.x.resize(N);
  g.chi0 = Eigen::VectorXd::Zero(N);
  g.g0_mask.assign(N, false);
  g.g1_mask.assign(N, false);
  for (int j = 0; j < N; ++j) {
    g.x[j] = (j + 1) * g.h;
    g.g0_mask[j] = g0.contains(g.x[j]);
    g.g1_mask[j] = g1.contains(g.x[j]);
    if (g.g0_mask[j]) g.chi0[j] = 1.0;
  }
  internal::require(g.g0_count() > 0, "g0 " + g0.to_string() + " contains no grid node");
  internal::require(!g.g0_mask.front() && !g.g0_mask.back(),
                    "g0 " + g0.to_string() + " reaches the first or last interior node");
  return g;
}

/// Tridiagonal matrix stored by diagonals; lower[i] = A(i+1, i), upper[i] = A(i, i+1).
struct TridiagonalOperator {
  Eigen::VectorXd lower, diag, upper;

  int size() const { return static_cast<int>(diag.size()); }

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    const int n = size();
    if (u.size() != n) throw ValidationError("dimension mismatch in tridiagonal apply");
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) {
      double s = diag[i] * u[i];
      if (i > 0) s += lower[i - 1] * u[i - 1];
      if (i + 1 < n) s += upper[i] * u[i + 1];
      r[i] = s;
    }
    return r;
  }

  Eigen::VectorXd apply_transpose(const Eigen::Ref<const Eigen::VectorXd>& u) const {
    return TridiagonalOperator{upper, diag, lower}.apply(u);
  }

  Eigen::MatrixXd dense() const {
    const int n = size();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      m(i, i) = diag[i];
      if (i + 1 < n) {
        m(i, i + 1) = upper[i];
        m(i + 1, i) = lower[i];
      }
    }
    return m;
  }

  /// alpha·I + beta·this
  TridiagonalOperator shifted(double alpha, double beta) const {
    return {beta * lower, (alpha + beta * diag.array()).matrix(), beta * upper};
  }
};

/// Thomas-algorithm factorization of a tridiagonal matrix, reused across solves.
class TridiagonalSolver {
 public:
  TridiagonalSolver() = default;
  explicit TridiagonalSolver(const TridiagonalOperator& a) : lower_(a.lower) {
    const int n = a.size();
    pivot_.resize(n);
    upper_ = a.upper;
    pivot_[0] = a.diag[0];
    for (int i = 1; i < n; ++i) {
      if (pivot_[i - 1] == 0.0 || !std::isfinite(pivot_[i - 1]))
        throw NumericalError("tridiagonal factorization broke down at row " + std::to_string(i));
      pivot_[i] = a.diag[i] - lower_[i - 1] * upper_[i - 1] / pivot_[i - 1];
    }
    if (pivot_[n - 1] == 0.0 || !std::isfinite(pivot_[n - 1]))
      throw NumericalError("tridiagonal factorization broke down at the last row");
  }

  Eigen::VectorXd solve(const Eigen::Ref<const Eigen::VectorXd>& b) const {
    const int n = static_cast<int>(pivot_.size());
    Eigen::VectorXd y(n);
    y[0] = b[0];
    for (int i = 1; i < n; ++i) y[i] = b[i] - lower_[i - 1] / pivot_[i - 1] * y[i - 1];
    y[n - 1] /= pivot_[n - 1];
    for (int i = n - 2; i >= 0; --i) y[i] = (y[i] - upper_[i] * y[i + 1]) / pivot_[i];
    return y;
  }

 private:
  Eigen::VectorXd lower_, upper_, pivot_;
};

/// Conservative stencil for u ↦ (a u')' from midpoint samples a_{j+1/2} (N + 1 values).
inline TridiagonalOperator assemble_elliptic(const SpatialGrid& grid,
                                             const Eigen::Ref<const Eigen::VectorXd>& a_mid) {
  const int n = grid.N;
  if (a_mid.size() != n + 1)
    throw ValidationError("elliptic coefficient needs N + 1 midpoint samples");
  for (int j = 0; j <= n; ++j) {
    if (!(a_mid[j] > 0))
      throw ValidationError("diffusion coefficient is not positive at x = " +
                            std::to_string((j + 0.5) * grid.h));
  }
  const double ih2 = 1.0 / (grid.h * grid.h);
  TridiagonalOperator e;
  e.diag.resize(n);
  e.lower.resize(n - 1);
  e.upper.resize(n - 1);
  for (int j = 0; j < n; ++j) e.diag[j] = -(a_mid[j] + a_mid[j + 1]) * ih2;
  for (int j = 0; j + 1 < n; ++j) e.lower[j] = e.upper[j] = a_mid[j + 1] * ih2;
  return e;
}

inline TridiagonalOperator assemble_elliptic(const SpatialGrid& grid,
                                             const std::function<double(double)>& a) {
  const Eigen::VectorXd mid = grid.midpoints();
  Eigen::VectorXd samples(mid.size());
  for (Eigen::Index j = 0; j < mid.size(); ++j) samples[j] = a(mid[j]);
  return assemble_elliptic(grid, samples);
}

/// Centered difference (u_{j+1} - u_{j-1}) / 2h with zero boundary values.
inline Eigen::VectorXd gradient(const SpatialGrid& grid, const Eigen::Ref<const Eigen::VectorXd>& u) {
  const int n = grid.N;
  if (u.size() != n) throw ValidationError("dimension mismatch in gradient");
  const double s = 0.5 / grid.h;
  Eigen::VectorXd g(n);
  for (int j = 0; j < n; ++j) {
    const double right = j + 1 < n ? u[j + 1] : 0.0;
    const double left = j > 0 ? u[j - 1] : 0.0;
    g[j] = s * right - s * left;
  }
  return g;
}

/// Negative transpose of gradient, assembled column by column.
inline Eigen::VectorXd weak_divergence(const SpatialGrid& grid,
                                       const Eigen::Ref<const Eigen::VectorXd>& q) {
  const int n = grid.N;
  if (q.size() != n) throw ValidationError("dimension mismatch in weak_divergence");
  const double s = 0.5 / grid.h;
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  // gradient row j holds +s at column j+1 and -s at column j-1
  for (int j = 0; j < n; ++j) {
    if (j + 1 < n) d[j + 1] -= s * q[j];
    if (j > 0) d[j - 1] += s * q[j];
  }
  return d;
}

inline TridiagonalOperator gradient_operator(const SpatialGrid& grid) {
  const int n = grid.N;
  const double s = 0.5 / grid.h;
  return {Eigen::VectorXd::Constant(n - 1, -s), Eigen::VectorXd::Zero(n),
          Eigen::VectorXd::Constant(n - 1, s)};
}

}  // namespace stochnull
