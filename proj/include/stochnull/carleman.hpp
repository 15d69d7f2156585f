#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochnull/errors.hpp"
#include "stochnull/expression.hpp"
#include "stochnull/psi.hpp"
#include "stochnull/scenario.hpp"
#include "stochnull/spde.hpp"

namespace stochnull {

/// λ_min = C0 (e^{2μ|ψ|∞} T + T²)
inline double lambda_threshold(double mu, const PsiFunction& psi, double T, double c0 = 1.0) {
  internal::require(mu >= 1, "mu must be >= 1");
  return c0 * (std::exp(2 * mu * psi.sup) * T + T * T);
}

/// Time factor g = 1/(t(T-t)) and its first two derivatives.
struct TimeFactor {
  double g, g_t, g_tt;

  static TimeFactor at(double t, double T) {
    if (!(t > 0 && t < T)) throw ValidationError("weights are singular at t = 0 and t = T");
    const double p = t * (T - t);
    const double s = T - 2 * t;
    return {1 / p, -s / (p * p), 2 / (p * p) + 2 * s * s / (p * p * p)};
  }
};

/// φ, α, l = λα and log θ = l on interior time levels × nodes.
struct CarlemanWeightSet {
  double lambda = 1, mu = 1, T = 1, psi_sup = 1;
  std::vector<int> levels;
  std::vector<double> times;
  Eigen::MatrixXd phi, alpha, phi_t, alpha_t;
  Eigen::VectorXd phi_min, phi_max;

  int columns() const { return static_cast<int>(levels.size()); }

  int column(int level) const {
    auto it = std::find(levels.begin(), levels.end(), level);
    if (it == levels.end())
      throw ValidationError("level " + std::to_string(level) + " is not an interior weight level");
    return static_cast<int>(it - levels.begin());
  }

  double log_theta(int col, int i) const { return lambda * alpha(i, col); }

  /// θ², exponentiated only when |2l| < 700 (0 otherwise: l < 0).
  double theta_squared(int col, int i) const {
    const double two_l = 2 * log_theta(col, i);
    return std::abs(two_l) < 700 ? std::exp(two_l) : 0.0;
  }
};

inline CarlemanWeightSet eval_weights(const PsiFunction& psi, double lambda, double mu,
                                      const ScenarioTree& tree) {
  internal::require(lambda >= 1, "lambda must be >= 1");
  internal::require(mu >= 1, "mu must be >= 1");
  const int n_space = static_cast<int>(psi.x.size());
  const double T = tree.horizon();
  CarlemanWeightSet w;
  w.lambda = lambda;
  w.mu = mu;
  w.T = T;
  w.psi_sup = psi.sup;
  for (int n = 1; n < tree.steps(); ++n) {
    w.levels.push_back(n);
    w.times.push_back(tree.time(n));
  }
  const int cols = w.columns();
  w.phi.resize(n_space, cols);
  w.alpha.resize(n_space, cols);
  w.phi_t.resize(n_space, cols);
  w.alpha_t.resize(n_space, cols);
  w.phi_min.resize(cols);
  w.phi_max.resize(cols);
  const double e_max = std::exp(2 * mu * psi.sup);
  for (int c = 0; c < cols; ++c) {
    const TimeFactor tf = TimeFactor::at(w.times[c], T);
    for (int i = 0; i < n_space; ++i) {
      const double e = std::exp(mu * psi.nodal(0, i));
      w.phi(i, c) = tf.g * e;
      w.alpha(i, c) = tf.g * (e - e_max);
      w.phi_t(i, c) = tf.g_t * e;
      w.alpha_t(i, c) = tf.g_t * (e - e_max);
      const double phi2 = w.phi(i, c) * w.phi(i, c);
      // |φ_t| <= Tφ² and |α_t| <= T e^{2μ|ψ|∞} φ²
      if (std::abs(w.phi_t(i, c)) > T * phi2 * (1 + 1e-12) ||
          std::abs(w.alpha_t(i, c)) > T * e_max * phi2 * (1 + 1e-12))
        throw NumericalError("weight time-derivative bound violated at level " +
                             std::to_string(w.levels[c]));
    }
    w.phi_min[c] = w.phi.col(c).minCoeff();
    w.phi_max[c] = w.phi.col(c).maxCoeff();
  }
  if (!w.phi.allFinite() || !w.alpha.allFinite()) throw NumericalError("non-finite Carleman weights");
  return w;
}

/// 1-D appendix coefficients at a single point.
struct AppendixPoint {
  double phi = 0;
  double Psi = 0;
  double A = 0, B = 0, c11 = 0;
  double lead_A = 0;  // λ²μ²φ² a ψ'²
  double lead_B = 0;  // 2λ³μ⁴φ³ (a ψ'²)²
  double c11_floor = 0;  // β²λμ²φψ'²
};

inline AppendixPoint appendix_point(const PsiFunction& psi, const ScalarField& a, double beta,
                                    double lambda, double mu, double T, double t, double x) {
  const TimeFactor tf = TimeFactor::at(t, T);
  const double p1 = psi(x, 1), p2 = psi(x, 2), p3 = psi(x, 3), p4 = psi(x, 4);
  const double e = std::exp(mu * psi(x, 0));
  const double e_max = std::exp(2 * mu * psi.sup);
  const double mu2 = mu * mu, mu3 = mu2 * mu, mu4 = mu2 * mu2;
  // d^k/dx^k e^{μψ} = D_k e^{μψ}
  const double d1 = mu * p1;
  const double d2 = mu * p2 + mu2 * p1 * p1;
  const double d3 = mu * p3 + 3 * mu2 * p1 * p2 + mu3 * p1 * p1 * p1;
  const double d4 = mu * p4 + 4 * mu2 * p1 * p3 + 3 * mu2 * p2 * p2 + 6 * mu3 * p1 * p1 * p2 +
                    mu4 * p1 * p1 * p1 * p1;
  const double le = lambda * e;
  const double l_t = lambda * tf.g_t * (e - e_max);
  const double l_tt = lambda * tf.g_tt * (e - e_max);
  const double l_x = le * tf.g * d1, l_xx = le * tf.g * d2, l_xxx = le * tf.g * d3, l_xxxx = le * tf.g * d4;
  const double l_xt = le * tf.g_t * d1, l_xxt = le * tf.g_t * d2;

  const Jet2 aj = a.jet(t, x);
  const double av = aj.v, a_t = aj.t, a_x = aj.x, a_xx = aj.xx, a_xt = aj.tx;

  AppendixPoint r;
  r.phi = tf.g * e;
  r.Psi = -2 * av * l_xx;
  const double Psi_x = -2 * (a_x * l_xx + av * l_xxx);
  const double Psi_t = -2 * (a_t * l_xx + av * l_xxt);
  const double Psi_xx = -2 * (a_xx * l_xx + 2 * a_x * l_xxx + av * l_xxxx);

  r.A = av * l_x * l_x - a_x * l_x - av * l_xx - r.Psi - l_t;
  const double A_x = a_x * l_x * l_x + 2 * av * l_x * l_xx - a_xx * l_x - 2 * a_x * l_xx - av * l_xxx -
                     Psi_x - l_xt;
  const double A_t = a_t * l_x * l_x + 2 * av * l_x * l_xt - a_xt * l_x - a_x * l_xt - a_t * l_xx -
                     av * l_xxt - Psi_t - l_tt;
  const double Aal_x = A_x * av * l_x + r.A * a_x * l_x + r.A * av * l_xx;
  const double aPsi_x_x = a_x * Psi_x + av * Psi_xx;
  r.B = 2 * (r.A * r.Psi + Aal_x) - A_t + aPsi_x_x;

  const double al_x_x = a_x * l_x + av * l_xx;
  const double a2l_x_x = 2 * av * a_x * l_x + av * av * l_xx;
  r.c11 = 2 * av * al_x_x - a2l_x_x + 0.5 * a_t - r.Psi * av;

  const double aq = av * p1 * p1;
  r.lead_A = lambda * lambda * mu2 * r.phi * r.phi * aq;
  r.lead_B = 2 * lambda * lambda * lambda * mu4 * r.phi * r.phi * r.phi * aq * aq;
  r.c11_floor = beta * beta * lambda * mu2 * r.phi * p1 * p1;
  return r;
}

/// Nodal appendix coefficients at one interior level of a weight set.
struct AppendixCoefficients {
  int level = 0;
  double t = 0;
  Eigen::VectorXd Psi, A, B, c11, lead_A, lead_B, c11_floor;
};

inline AppendixCoefficients appendix_coeffs(const PsiFunction& psi, const CarlemanWeightSet& w,
                                            const ScalarField& a, double beta, int level) {
  const int c = w.column(level);
  const int n = static_cast<int>(psi.x.size());
  AppendixCoefficients r;
  r.level = level;
  r.t = w.times[c];
  for (auto* v : {&r.Psi, &r.A, &r.B, &r.c11, &r.lead_A, &r.lead_B, &r.c11_floor}) v->resize(n);
  for (int i = 0; i < n; ++i) {
    const AppendixPoint p = appendix_point(psi, a, beta, w.lambda, w.mu, w.T, r.t, psi.x[i]);
    r.Psi[i] = p.Psi;
    r.A[i] = p.A;
    r.B[i] = p.B;
    r.c11[i] = p.c11;
    r.lead_A[i] = p.lead_A;
    r.lead_B[i] = p.lead_B;
    r.c11_floor[i] = p.c11_floor;
  }
  if (!r.A.allFinite() || !r.B.allFinite() || !r.c11.allFinite())
    throw NumericalError("non-finite appendix coefficients at level " + std::to_string(level));
  return r;
}

struct LeadingOrderRow {
  double lambda = 0, mu = 0;
  bool flagged = false;  // λ below threshold: not computed
  double a_deviation = 0;  // max |𝒜 - lead| / |lead| outside G1
  double b_deviation = 0;  // max |ℬ - lead| / |ℬ| outside G1
  double b_min = 0;        // min ℬ / lead_B outside G1
  bool b_positive = false;
  double c11_margin = 0;   // min c11 / (β²λμ²φψ'²) outside G1
};

/// Deviation of 𝒜, ℬ, c11 from their leading terms over interior levels and
/// grid nodes outside G1, for each (λ, μ).
inline std::vector<LeadingOrderRow> leading_order_check(const PsiFunction& psi, const ScalarField& a,
                                                        double beta,
                                                        const std::vector<std::array<double, 2>>& pairs,
                                                        const ScenarioTree& tree, double c0 = 1.0) {
  std::vector<LeadingOrderRow> rows;
  const double T = tree.horizon();
  for (const auto& [lambda, mu] : pairs) {
    LeadingOrderRow row;
    row.lambda = lambda;
    row.mu = mu;
    if (lambda < lambda_threshold(mu, psi, T, c0) * (1 - 1e-12)) {
      row.flagged = true;
      rows.push_back(row);
      continue;
    }
    double a_dev = 0, b_dev = 0, b_min = std::numeric_limits<double>::infinity();
    double margin = std::numeric_limits<double>::infinity();
    for (int n = 1; n < tree.steps(); ++n) {
      for (Eigen::Index i = 0; i < psi.x.size(); ++i) {
        if (psi.g1.contains(psi.x[i])) continue;
        const AppendixPoint p = appendix_point(psi, a, beta, lambda, mu, T, tree.time(n), psi.x[i]);
        a_dev = std::max(a_dev, std::abs(p.A - p.lead_A) / std::abs(p.lead_A));
        b_dev = std::max(b_dev, std::abs(p.B - p.lead_B) / std::abs(p.B));
        b_min = std::min(b_min, p.B / p.lead_B);
        margin = std::min(margin, p.c11 / p.c11_floor);
      }
    }
    row.a_deviation = a_dev;
    row.b_deviation = b_dev;
    row.b_min = b_min;
    row.b_positive = b_min > 0;
    row.c11_margin = margin;
    rows.push_back(row);
  }
  return rows;
}

/// Weighted integrals of one Carleman inequality, scaled by e^{-log_scale}.
struct CarlemanRatio {
  std::array<double, 2> lhs_terms{};  // z term, gradient term
  std::array<double, 4> rhs_terms{};  // observation, drift source, divergence source, noise term
  double lhs = 0, rhs = 0;
  double ratio = 0;
  double log_scale = 0;
  bool flagged = false;
};

namespace internal {

// Σ_n Δt E_n[h Σ_i exp(logw(n, i) - shift) f²] for each term, over the given levels.
struct WeightedTerm {
  const AdaptedField* field;
  double log_const;   // log of the λ, μ prefactor
  int phi_power;
  bool g0_only;
};

inline CarlemanRatio weighted_ratio(const ScenarioTree& tree, const SpatialGrid& grid,
                                    const CarlemanWeightSet& w, const std::vector<WeightedTerm>& terms,
                                    int exclude) {
  internal::require(exclude >= 1, "endpoint exclusion must be >= 1");
  std::vector<int> levels;
  for (int n = exclude; n <= std::min(tree.steps() - exclude, tree.steps() - 1); ++n) levels.push_back(n);
  internal::require(!levels.empty(), "endpoint exclusion leaves no time levels");

  double shift = -std::numeric_limits<double>::infinity();
  for (const WeightedTerm& term : terms)
    for (int n : levels) {
      const int c = w.column(n);
      for (int i = 0; i < grid.N; ++i)
        shift = std::max(shift, term.log_const + 2 * w.log_theta(c, i) + term.phi_power * std::log(w.phi(i, c)));
    }

  std::vector<double> totals(terms.size(), 0.0);
  Eigen::VectorXd weight(grid.N);
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const WeightedTerm& term = terms[t];
    for (int n : levels) {
      const int c = w.column(n);
      for (int i = 0; i < grid.N; ++i) {
        const double lw = term.log_const + 2 * w.log_theta(c, i) + term.phi_power * std::log(w.phi(i, c)) - shift;
        weight[i] = (term.g0_only && !grid.g0_mask[i]) ? 0.0 : std::exp(lw);
      }
      Eigen::RowVectorXd per_node(tree.nodes_at(n));
      for (int k = 0; k < tree.nodes_at(n); ++k) {
        const auto f = term.field->col(tree.index(n, k));
        per_node[k] = grid.h * (weight.array() * f.array().square()).sum();
      }
      totals[t] += tree.dt() * internal::tower_mean(per_node)[0];
    }
  }
  CarlemanRatio r;
  r.log_scale = shift;
  r.lhs_terms = {totals[0], totals[1]};
  r.rhs_terms = {totals[2], totals[3], totals[4], totals[5]};
  r.lhs = totals[0] + totals[1];
  r.rhs = totals[2] + totals[3] + totals[4] + totals[5];
  if (r.rhs > 0)
    r.ratio = r.lhs / r.rhs;
  else if (r.lhs > 0) {
    r.ratio = std::numeric_limits<double>::infinity();
    r.flagged = true;
  }
  return r;
}

inline AdaptedField nodewise_gradient(const SpatialGrid& grid, const AdaptedField& f) {
  AdaptedField d;
  d.values.resize(f.values.rows(), f.values.cols());
  for (Eigen::Index c = 0; c < f.values.cols(); ++c) d.values.col(c) = gradient(grid, f.values.col(c));
  return d;
}

}  // namespace internal

enum class CarlemanSource { kAdjoint, kGeneric };

/// Backward inequality: λ³μ⁴∫θ²φ³z² + λμ²∫θ²φ|z_x|² against
/// λ³μ⁴∫_{Q0}θ²φ³z² + ∫θ²F0² + λ²μ²∫θ²φ²F² + λ²μ²∫θ²φ²Z².
/// kAdjoint: (z, Z) solves the adjoint with F0 = -a1 z - a2 Z, F = B1 z + B2 Z.
/// kGeneric: (z, Z) solves the pure backward equation with the supplied F0, F.
inline CarlemanRatio carleman_ratio_backward(const SpdeProblem& p, const CarlemanWeightSet& w,
                                             const Eigen::MatrixXd& zT, CarlemanSource source,
                                             const BackwardSources& generic = {}, int exclude = 1) {
  const SpatialGrid& grid = p.grid();
  const ScenarioTree& tree = p.tree();
  internal::require(w.phi.rows() == grid.N, "weights do not match the grid");
  AdaptedField f0(tree, grid.N), fd(tree, grid.N);
  BackwardSolution s;
  if (source == CarlemanSource::kAdjoint) {
    s = backward_solve(p, zT, BackwardMode::kAdjoint13);
    const ProblemCoefficients& c = p.coeffs();
    for (int n = 0; n < tree.steps(); ++n)
      for (int k = 0; k < tree.nodes_at(n); ++k) {
        const int idx = tree.index(n, k);
        f0.col(idx) = -(c.a1.col(n).array() * s.z.col(idx).array() + c.a2.col(n).array() * s.Z.col(idx).array()).matrix();
        fd.col(idx) = (c.b1.col(n).array() * s.z.col(idx).array() + c.b2.col(n).array() * s.Z.col(idx).array()).matrix();
      }
  } else {
    s = backward_solve(p, zT, BackwardMode::kGeneric, {nullptr, generic.f0, generic.f_div});
    if (generic.f0) f0 = *generic.f0;
    if (generic.f_div) fd = *generic.f_div;
  }
  const AdaptedField dz = internal::nodewise_gradient(grid, s.z);
  const double ll = std::log(w.lambda), lm = std::log(w.mu);
  return internal::weighted_ratio(tree, grid, w,
                                  {{&s.z, 3 * ll + 4 * lm, 3, false},
                                   {&dz, ll + 2 * lm, 1, false},
                                   {&s.z, 3 * ll + 4 * lm, 3, true},
                                   {&f0, 0.0, 0, false},
                                   {&fd, 2 * ll + 2 * lm, 2, false},
                                   {&s.Z, 2 * ll + 2 * lm, 2, false}},
                                  exclude);
}

/// Forward inequality at fixed μ = μ0: λ³∫θ²φ³z² + λ∫θ²φ|z_x|² against
/// λ³∫_{Q0}θ²φ³z² + ∫θ²F1² + λ²∫θ²φ²F2² + λ²∫θ²φ²F².
/// kAdjoint: z solves the forward adjoint with F1 = -a1 z, F2 = -a2 z, F = B z.
/// kGeneric: dz - (a z_x)_x dt = (F1 + F_x) dt + F2 dW with the supplied sources
/// (drift f0, divergence f_div, noise v).
inline CarlemanRatio carleman_ratio_forward(const SpdeProblem& p, const CarlemanWeightSet& w,
                                            const Eigen::VectorXd& z0, CarlemanSource source,
                                            const ForwardSources& generic = {}, int exclude = 1) {
  const SpatialGrid& grid = p.grid();
  const ScenarioTree& tree = p.tree();
  internal::require(w.phi.rows() == grid.N, "weights do not match the grid");
  AdaptedField f1(tree, grid.N), f2(tree, grid.N), fd(tree, grid.N);
  ForwardSolution s;
  if (source == CarlemanSource::kAdjoint) {
    s = forward_solve(p, z0, {}, ForwardMode::kAdjoint15);
    const ProblemCoefficients& c = p.coeffs();
    for (int n = 0; n < tree.steps(); ++n)
      for (int k = 0; k < tree.nodes_at(n); ++k) {
        const int idx = tree.index(n, k);
        const auto z = s.y.col(idx).array();
        f1.col(idx) = -(c.a1.col(n).array() * z).matrix();
        f2.col(idx) = -(c.a2.col(n).array() * z).matrix();
        fd.col(idx) = (c.b.col(n).array() * z).matrix();
      }
  } else {
    s = forward_solve(p.without_potentials(), z0, {nullptr, generic.v, generic.f0, generic.f_div});
    if (generic.f0) f1 = *generic.f0;
    if (generic.v) f2 = *generic.v;
    if (generic.f_div) fd = *generic.f_div;
  }
  const AdaptedField dz = internal::nodewise_gradient(grid, s.y);
  const double ll = std::log(w.lambda);
  return internal::weighted_ratio(tree, grid, w,
                                  {{&s.y, 3 * ll, 3, false},
                                   {&dz, ll, 1, false},
                                   {&s.y, 3 * ll, 3, true},
                                   {&f1, 0.0, 0, false},
                                   {&f2, 2 * ll, 2, false},
                                   {&fd, 2 * ll, 2, false}},
                                  exclude);
}

enum class CarlemanDirection { kBackward, kForward };

struct CarlemanSample {
  int sample = 0;
  double lambda_multiple = 1;
  double lhs = 0, rhs = 0, ratio = 0;
};

struct CarlemanStudy {
  double lambda_threshold = 0;
  std::vector<double> multiples;
  std::vector<CarlemanSample> samples;
  std::vector<double> medians, maxima;
  bool maxima_finite = true;
  bool medians_non_increasing = true;
};

/// Seeded Gaussian terminal (or initial) data, the same draws for every λ multiple;
/// the adjoint sources are generated by the sampled solution itself.
inline CarlemanStudy carleman_sample_study(const SpdeProblem& p, const PsiFunction& psi, double mu,
                                           CarlemanDirection direction, int samples,
                                           const std::vector<double>& multiples, unsigned seed,
                                           double c0 = 1.0, int exclude = 1) {
  internal::require(samples >= 1, "at least one Carleman sample is required");
  internal::require(!multiples.empty(), "at least one lambda multiple is required");
  for (double m : multiples) internal::require(m >= 1, "lambda multiples must be >= 1");
  const ScenarioTree& tree = p.tree();
  const int N = p.grid().N;
  CarlemanStudy st;
  st.lambda_threshold = lambda_threshold(mu, psi, tree.horizon(), c0);
  st.multiples = multiples;
  for (double mult : multiples) {
    const CarlemanWeightSet w = eval_weights(psi, mult * st.lambda_threshold, mu, tree);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> ratios;
    for (int s = 0; s < samples; ++s) {
      const int cols = direction == CarlemanDirection::kBackward ? tree.leaf_count() : 1;
      Eigen::MatrixXd data(N, cols);
      for (int c = 0; c < cols; ++c)
        for (int r = 0; r < N; ++r) data(r, c) = nd(rng);
      const CarlemanRatio r =
          direction == CarlemanDirection::kBackward
              ? carleman_ratio_backward(p, w, data, CarlemanSource::kAdjoint, {}, exclude)
              : carleman_ratio_forward(p, w, data.col(0), CarlemanSource::kAdjoint, {}, exclude);
      st.samples.push_back({s, mult, r.lhs, r.rhs, r.ratio});
      ratios.push_back(r.ratio);
    }
    st.maxima.push_back(*std::max_element(ratios.begin(), ratios.end()));
    if (!std::isfinite(st.maxima.back())) st.maxima_finite = false;
    std::sort(ratios.begin(), ratios.end());
    const std::size_t m = ratios.size();
    st.medians.push_back(m % 2 ? ratios[m / 2] : 0.5 * (ratios[m / 2 - 1] + ratios[m / 2]));
    if (st.medians.size() > 1 && st.medians.back() > st.medians[st.medians.size() - 2])
      st.medians_non_increasing = false;
  }
  return st;
}

}  // namespace stochnull
