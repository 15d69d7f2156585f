#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochnull/errors.hpp"
#include "stochnull/grid.hpp"

namespace stochnull {

/// Piecewise polynomial with monomial coefficients local to each piece's left knot.
template <int Degree>
class PiecewisePolynomial {
 public:
  using Coefficients = std::array<double, Degree + 1>;

  PiecewisePolynomial() = default;
  PiecewisePolynomial(std::vector<double> knots, std::vector<Coefficients> pieces)
      : knots_(std::move(knots)), pieces_(std::move(pieces)) {
    if (knots_.size() != pieces_.size() + 1) throw ValidationError("knot/piece count mismatch");
  }

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<Coefficients>& pieces() const { return pieces_; }
  int piece_count() const { return static_cast<int>(pieces_.size()); }

  /// d-th derivative of piece j at local offset s.
  double eval_piece(int j, double s, int d) const {
    const Coefficients& c = pieces_[j];
    double r = 0.0;
    for (int k = Degree; k >= d; --k) r = r * s + c[k] * falling(k, d);
    return r;
  }

  double operator()(double x, int d = 0) const {
    const int j = locate(x);
    return eval_piece(j, x - knots_[j], d);
  }

  /// One-sided values at interior knot i (1..pieces-1): from the left piece, from the right one.
  double left_limit(int i, int d) const { return eval_piece(i - 1, knots_[i] - knots_[i - 1], d); }
  double right_limit(int i, int d) const { return eval_piece(i, 0.0, d); }

  void scale(double factor) {
    for (auto& c : pieces_)
      for (double& v : c) v *= factor;
  }

 private:
  static double falling(int k, int d) {
    double r = 1.0;
    for (int i = 0; i < d; ++i) r *= k - i;
    return r;
  }

  int locate(double x) const {
    auto it = std::upper_bound(knots_.begin() + 1, knots_.end() - 1, x);
    return static_cast<int>(it - knots_.begin()) - 1;
  }

  std::vector<double> knots_;
  std::vector<Coefficients> pieces_;
};

/// Weight ψ on [0, L]: increasing up to the center of G1, decreasing after,
/// vanishing at both ends, max ψ = 1, C⁴ and piecewise quintic.
///
/// ψ' = A(1 - H(x; a, c)) - C·H(x; c, b) where H(·; p, q) is the C³ quartic
/// step rising from 0 at p to 1 at q (integral of a uniform cubic B-spline on
/// four cells), G1 = (a, b), c = (a + b)/2, A = L - (b + c)/2, C = (a + c)/2.
struct PsiFunction {
  PiecewisePolynomial<5> poly;
  Interval g1;
  double critical_point = 0.0;
  double sup = 1.0;

  Eigen::VectorXd x;
  // rows: ψ, ψ', ψ'', ψ''', ψ'''' at the grid nodes
  Eigen::Matrix<double, 5, Eigen::Dynamic> nodal;

  double operator()(double at, int d = 0) const { return poly(at, d); }
  Eigen::VectorXd values() const { return nodal.row(0).transpose(); }
  Eigen::VectorXd derivative(int d) const { return nodal.row(d).transpose(); }
};

namespace internal {

// Cumulative uniform cubic B-spline on [0, 4], piece j in τ ∈ [0, 1].
inline const std::array<std::array<double, 5>, 4>& bspline_step_pieces() {
  static const std::array<std::array<double, 5>, 4> c = {{
      {0.0, 0.0, 0.0, 0.0, 1.0 / 24},
      {1.0 / 24, 1.0 / 6, 1.0 / 4, 1.0 / 6, -1.0 / 8},
      {0.5, 4.0 / 6, 0.0, -2.0 / 6, 1.0 / 8},
      {23.0 / 24, 1.0 / 6, -1.0 / 4, 1.0 / 6, -1.0 / 24},
  }};
  return c;
}

}  // namespace internal

inline double psi_minimum_width(const SpatialGrid& grid) { return 1e-3 * grid.L; }

inline PsiFunction build_psi(const SpatialGrid& grid, Interval g1) {
  const double L = grid.L;
  internal::require(g1.lo > 0 && g1.hi < L && g1.lo < g1.hi,
                    "g1 " + g1.to_string() + " must lie strictly inside (0, L)");
  const double min_width = psi_minimum_width(grid);
  if (g1.width() < min_width) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "g1 %s is too narrow for the C4 cap: minimum width is %g",
                  g1.to_string().c_str(), min_width);
    throw ValidationError(buf);
  }
  const double a = g1.lo, b = g1.hi, c = g1.center();
  const double A = L - 0.5 * (b + c);
  const double C = 0.5 * (a + c);
  const double q = 0.25 * (c - a);

  std::vector<double> knots{0.0};
  std::vector<std::array<double, 5>> dpsi;  // pieces of ψ'
  knots.push_back(a);
  dpsi.push_back({A, 0, 0, 0, 0});
  const auto& step = internal::bspline_step_pieces();
  for (int side = 0; side < 2; ++side) {
    const double start = side == 0 ? a : c;
    // ψ' = base + slope·H on this half
    const double base = side == 0 ? A : 0.0;
    const double slope = side == 0 ? -A : -C;
    for (int j = 0; j < 4; ++j) {
      std::array<double, 5> p{};
      double qk = 1.0;
      for (int k = 0; k < 5; ++k) {
        p[k] = slope * step[j][k] / qk;
        qk *= q;
      }
      p[0] += base;
      dpsi.push_back(p);
      knots.push_back(j == 3 ? (side == 0 ? c : b) : start + (j + 1) * q);
    }
  }
  dpsi.push_back({-C, 0, 0, 0, 0});
  knots.push_back(L);

  std::vector<std::array<double, 6>> pieces;
  double value = 0.0;
  for (std::size_t j = 0; j < dpsi.size(); ++j) {
    std::array<double, 6> p{};
    p[0] = value;
    for (int k = 0; k < 5; ++k) p[k + 1] = dpsi[j][k] / (k + 1);
    pieces.push_back(p);
    const double len = knots[j + 1] - knots[j];
    double v = 0.0;
    for (int k = 5; k >= 0; --k) v = v * len + p[k];
    value = v;
  }

  PsiFunction psi;
  psi.poly = PiecewisePolynomial<5>(knots, pieces);
  const double peak = psi.poly.right_limit(5, 0);
  psi.poly.scale(1.0 / peak);
  psi.g1 = g1;
  psi.critical_point = c;
  psi.sup = 1.0;
  psi.x = grid.x;
  psi.nodal.resize(5, grid.N);
  for (int j = 0; j < grid.N; ++j)
    for (int d = 0; d < 5; ++d) psi.nodal(d, j) = psi.poly(grid.x[j], d);
  return psi;
}

}  // namespace stochnull
