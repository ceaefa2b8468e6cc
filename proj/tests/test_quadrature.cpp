#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "cuspma/functionals.hpp"
#include "cuspma/grid.hpp"
#include "cuspma/quadrature.hpp"

using namespace cuspma;
using std::numbers::pi;

TEST(Quadrature, GaussLegendreExactForPolynomials) {
  for (int n : {1, 2, 5, 12, 24}) {
    const quad::Rule r = quad::gauss_legendre(n);
    double wsum = 0.0;
    for (double w : r.w) wsum += w;
    EXPECT_NEAR(wsum, 2.0, 1e-14);
    // x^(2n-2) integrates to 2 / (2n - 1)
    const int deg = 2 * n - 2;
    EXPECT_NEAR(r.integrate([&](double x) { return std::pow(x, deg); }), 2.0 / (deg + 1), 1e-14);
  }
}

TEST(Quadrature, CompositeLogOnAlgebraicDecay) {
  const quad::Rule r = quad::composite_log(2.0, 2e6, 64, 8);
  EXPECT_NEAR(r.integrate([](double s) { return 1.0 / (s * s); }), 0.5 - 0.5e-6, 1e-14);
}

TEST(Quadrature, PeriodicTrapezoidSpectral) {
  const quad::Rule r = quad::periodic_trapezoid(16);
  EXPECT_NEAR(r.integrate([](double t) { return std::exp(std::cos(t)); }), 2.0 * pi * std::cyl_bessel_i(0.0, 1.0),
              1e-14);
}

TEST(Quadrature, RefineUntilStableStopsAtAgreement) {
  const quad::ConvergedValue v = quad::refine_until_stable(
      [](int level) { return 1.0 + std::pow(0.1, level + 1); }, 1e-3, 10);
  EXPECT_TRUE(v.converged);
  EXPECT_EQ(v.level, 3);
  const quad::ConvergedValue w = quad::refine_until_stable([](int level) { return double(level); }, 1e-3, 4);
  EXPECT_FALSE(w.converged);
}

TEST(Quadrature, CuspBoxAgainstClosedForm) {
  // int over [a, b]^2 of dV = (2 pi (1/a - 1/b))^2
  const double a = 2.0, b = 50.0;
  const double v = integrate_cusp_box(2, 2, a, b, [](const Point&) { return 1.0; });
  const double c = 2.0 * pi * (1.0 / a - 1.0 / b);
  EXPECT_NEAR(v, c * c, 1e-13);
  // a disc spectator multiplies by pi
  EXPECT_NEAR(integrate_cusp_box(2, 1, a, b, [](const Point&) { return 1.0; }), pi * c, 1e-13);
  // int rho dV over [a, b] = 2 pi log(b / a)
  EXPECT_NEAR(integrate_cusp_box(1, 1, a, b, [](const Point& s) { return s[0]; }), 2.0 * pi * std::log(b / a),
              1e-12);
}

TEST(Quadrature, GeometricBreaksKeepInnerPanels) {
  const auto b1 = geometric_breaks(2.0, 64.0, 4);
  const auto b2 = geometric_breaks(2.0, 128.0, 4, {64.0});
  for (std::size_t i = 0; i < b1.size(); ++i) EXPECT_NEAR(b1[i], b2[i], 1e-12 * b1[i]);
}

TEST(Grid, DerivativesExactOnQuadratics) {
  const TorusGrid G = TorusGrid::make(2, 2.0, 12.0, 16);
  const Field f = Field::sample(G, [](const Point& s) { return 1.0 + 2.0 * s[0] + s[0] * s[1] - 0.5 * s[1] * s[1]; });
  const Derivatives d = derivatives(f);
  for (int i = 0; i <= G.N; ++i)
    for (int j = 0; j <= G.N; ++j) {
      EXPECT_NEAR(d.g[0](i, j), 2.0 + G.s(j), 1e-11);
      EXPECT_NEAR(d.g[1](i, j), G.s(i) - G.s(j), 1e-11);
      EXPECT_NEAR(d.H[0](i, j), 0.0, 1e-9);
      EXPECT_NEAR(d.H[1](i, j), 1.0, 1e-9);
      EXPECT_NEAR(d.H[3](i, j), -1.0, 1e-9);
    }
}

TEST(Grid, InterpolationExactOnCubics) {
  const TorusGrid G = TorusGrid::make(2, 2.0, 12.0, 10);
  auto p = [](const Point& s) { return s[0] * s[0] * s[0] - 2.0 * s[0] * s[1] * s[1] + s[1]; };
  const Field f = Field::sample(G, p);
  for (const Point& s : {Point{2.0, 2.0}, Point{3.3, 7.1}, Point{11.9, 2.05}, Point{12.0, 12.0}})
    EXPECT_NEAR(interpolate(f, s), p(s), 1e-10 * (1.0 + std::abs(p(s))));
  EXPECT_THROW(interpolate(f, Point{1.0, 5.0}), DomainError);
}

TEST(Grid, TrapezoidVolumeWeightsSecondOrder) {
  const double c = 2.0 * pi * (0.5 - 1.0 / 12.0);
  auto err = [&](int N) {
    const TorusGrid G = TorusGrid::make(2, 2.0, 12.0, N);
    double v = 0.0;
    for (int i = 0; i <= G.N; ++i)
      for (int j = 0; j <= G.N; ++j) v += dV_weight(G, i, j);
    return std::abs(v / (c * c) - 1.0);
  };
  const double e1 = err(128), e2 = err(256);
  EXPECT_LT(e2, 1e-3);
  EXPECT_NEAR(e1 / e2, 4.0, 0.05);
}
