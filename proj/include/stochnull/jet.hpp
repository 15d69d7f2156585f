#pragma once

#include <cmath>

namespace stochnull {

/// Second-order forward-mode jet in two variables (t, x).
struct Jet2 {
  double v = 0.0;
  double t = 0.0;
  double x = 0.0;
  double tt = 0.0;
  double tx = 0.0;
  double xx = 0.0;

  Jet2() = default;
  Jet2(double value) : v(value) {}  // NOLINT: implicit promotion of constants
  Jet2(double value, double dt, double dx, double dtt, double dtx, double dxx)
      : v(value), t(dt), x(dx), tt(dtt), tx(dtx), xx(dxx) {}

  static Jet2 variable_t(double value) { return {value, 1, 0, 0, 0, 0}; }
  static Jet2 variable_x(double value) { return {value, 0, 1, 0, 0, 0}; }
};

// Chain rule through a scalar function with derivatives f0, f1, f2 at u.v.
inline Jet2 compose(const Jet2& u, double f0, double f1, double f2) {
  return {f0,
          f1 * u.t,
          f1 * u.x,
          f2 * u.t * u.t + f1 * u.tt,
          f2 * u.t * u.x + f1 * u.tx,
          f2 * u.x * u.x + f1 * u.xx};
}

inline Jet2 operator+(const Jet2& a, const Jet2& b) {
  return {a.v + b.v, a.t + b.t, a.x + b.x, a.tt + b.tt, a.tx + b.tx, a.xx + b.xx};
}
inline Jet2 operator-(const Jet2& a, const Jet2& b) {
  return {a.v - b.v, a.t - b.t, a.x - b.x, a.tt - b.tt, a.tx - b.tx, a.xx - b.xx};
}
inline Jet2 operator-(const Jet2& a) { return {-a.v, -a.t, -a.x, -a.tt, -a.tx, -a.xx}; }

inline Jet2 operator*(const Jet2& a, const Jet2& b) {
  return {a.v * b.v,
          a.t * b.v + a.v * b.t,
          a.x * b.v + a.v * b.x,
          a.tt * b.v + 2 * a.t * b.t + a.v * b.tt,
          a.tx * b.v + a.t * b.x + a.x * b.t + a.v * b.tx,
          a.xx * b.v + 2 * a.x * b.x + a.v * b.xx};
}

inline Jet2 reciprocal(const Jet2& a) {
  const double r = 1.0 / a.v;
  return compose(a, r, -r * r, 2 * r * r * r);
}

inline Jet2 operator/(const Jet2& a, const Jet2& b) { return a * reciprocal(b); }

inline Jet2 exp(const Jet2& a) {
  const double e = std::exp(a.v);
  return compose(a, e, e, e);
}
inline Jet2 log(const Jet2& a) { return compose(a, std::log(a.v), 1 / a.v, -1 / (a.v * a.v)); }
inline Jet2 sin(const Jet2& a) {
  const double s = std::sin(a.v), c = std::cos(a.v);
  return compose(a, s, c, -s);
}
inline Jet2 cos(const Jet2& a) {
  const double s = std::sin(a.v), c = std::cos(a.v);
  return compose(a, c, -s, -c);
}
inline Jet2 sqrt(const Jet2& a) {
  const double r = std::sqrt(a.v);
  return compose(a, r, 0.5 / r, -0.25 / (r * a.v));
}
inline Jet2 tanh(const Jet2& a) {
  const double th = std::tanh(a.v);
  const double d1 = 1 - th * th;
  return compose(a, th, d1, -2 * th * d1);
}
inline Jet2 abs(const Jet2& a) {
  const double s = a.v < 0 ? -1.0 : 1.0;
  return compose(a, std::abs(a.v), s, 0.0);
}

inline Jet2 pow(const Jet2& a, double p) {
  if (p == 0) return Jet2(1.0);
  if (p == 1) return a;
  if (p == 2) return a * a;
  const double f0 = std::pow(a.v, p);
  const double f1 = p * std::pow(a.v, p - 1);
  const double f2 = p * (p - 1) * std::pow(a.v, p - 2);
  return compose(a, f0, f1, f2);
}

inline Jet2 pow(const Jet2& a, const Jet2& b) {
  if (b.t == 0 && b.x == 0 && b.tt == 0 && b.tx == 0 && b.xx == 0) return pow(a, b.v);
  return exp(b * log(a));
}

}  // namespace stochnull
