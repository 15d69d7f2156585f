#include "stochnull/expression.hpp"

#include <cmath>

#include <gtest/gtest.h>

namespace stochnull {
namespace {

double at(const std::string& s, double t, double x) { return ScalarField::parse(s)(t, x); }

TEST(Expression, Arithmetic) {
  EXPECT_DOUBLE_EQ(at("1 + 0.5*x", 0, 0.5), 1.25);
  EXPECT_DOUBLE_EQ(at("2^3^2", 0, 0), 512.0);
  EXPECT_DOUBLE_EQ(at("-2^2", 0, 0), -4.0);
  EXPECT_DOUBLE_EQ(at("(1 + t) * (2 - x) / 4", 1, 1), 0.5);
  EXPECT_DOUBLE_EQ(at("1e-3 * 2", 0, 0), 0.002);
  EXPECT_DOUBLE_EQ(at("pow(x, 2) + abs(-t)", 3, 2), 7.0);
  EXPECT_NEAR(at("sin(pi*x)", 0, 0.5), 1.0, 1e-15);
}

TEST(Expression, Constants) {
  const ScalarField f = ScalarField::parse("sin(pi*x/L) + T", {{"L", 2.0}, {"T", 0.5}, {"pi", M_PI}});
  EXPECT_NEAR(f(0, 1.0), 1.5, 1e-15);
  EXPECT_TRUE(ScalarField::parse("2*L", {{"L", 3}}).is_constant());
  EXPECT_FALSE(ScalarField::parse("2*x").is_constant());
}

TEST(Expression, Errors) {
  try {
    ScalarField::parse("x+*2");
    FAIL();
  } catch (const ExpressionError& e) {
    EXPECT_EQ(e.column(), 3);
  }
  EXPECT_THROW(ScalarField::parse(""), ExpressionError);
  EXPECT_THROW(ScalarField::parse("y + 1"), ExpressionError);
  EXPECT_THROW(ScalarField::parse("foo(x)"), ExpressionError);
  EXPECT_THROW(ScalarField::parse("(x + 1"), ExpressionError);
  EXPECT_THROW(ScalarField::parse("x 1"), ExpressionError);
  EXPECT_THROW(ScalarField::parse("pow(x)"), ExpressionError);
}

TEST(Jet, DerivativesMatchClosedForm) {
  const ScalarField f = ScalarField::parse("exp(t) * sin(2*x) + x^3 * t^2 + sqrt(1 + x*x) / (2 + t)");
  const double t = 0.3, x = 0.7;
  const Jet2 j = f.jet(t, x);
  const double q = std::sqrt(1 + x * x);
  EXPECT_NEAR(j.v, f(t, x), 1e-14);
  EXPECT_NEAR(j.t, std::exp(t) * std::sin(2 * x) + 2 * t * x * x * x - q / ((2 + t) * (2 + t)), 1e-13);
  EXPECT_NEAR(j.x, 2 * std::exp(t) * std::cos(2 * x) + 3 * x * x * t * t + x / q / (2 + t), 1e-13);
  EXPECT_NEAR(j.tt, std::exp(t) * std::sin(2 * x) + 2 * x * x * x + 2 * q / std::pow(2 + t, 3), 1e-13);
  EXPECT_NEAR(j.tx, 2 * std::exp(t) * std::cos(2 * x) + 6 * t * x * x - x / q / ((2 + t) * (2 + t)), 1e-13);
  EXPECT_NEAR(j.xx, -4 * std::exp(t) * std::sin(2 * x) + 6 * x * t * t + 1 / (q * q * q) / (2 + t), 1e-13);
}

TEST(Jet, FiniteDifferenceCrossCheck) {
  const ScalarField f = ScalarField::parse("tanh(x - t) * cos(t*x) + log(2 + x) + pow(1 + t, x)");
  const double t = 0.4, x = 0.9, d = 1e-4;
  const Jet2 j = f.jet(t, x);
  EXPECT_NEAR(j.x, (f(t, x + d) - f(t, x - d)) / (2 * d), 1e-7);
  EXPECT_NEAR(j.t, (f(t + d, x) - f(t - d, x)) / (2 * d), 1e-7);
  EXPECT_NEAR(j.xx, (f(t, x + d) - 2 * f(t, x) + f(t, x - d)) / (d * d), 1e-5);
  EXPECT_NEAR(j.tx, (f(t + d, x + d) - f(t + d, x - d) - f(t - d, x + d) + f(t - d, x - d)) / (4 * d * d),
              1e-5);
}

TEST(ScalarField, ConstantConversion) {
  const ScalarField c = -0.125;
  EXPECT_EQ(c(1, 2), -0.125);
  EXPECT_EQ(c.jet(1, 2).x, 0.0);
}

}  // namespace
}  // namespace stochnull
