#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "cuspma/estimates.hpp"

using namespace cuspma;

namespace {

constexpr double kPi = std::numbers::pi;

SolverConfig box(int grid, double eps = 1.0) {
  SolverConfig c;
  c.grid = grid;
  c.epsilon = eps;
  return c;
}

const ForcingField& bump() {
  static const ForcingField f = bump_forcing({});
  return f;
}

const SolutionField& bump_solution() {
  static const SolutionField sol = newton_solve(bump(), box(64));
  return sol;
}

GeometryBounds model_bounds() { return measure_bounds(ModelGeometry{}, 64); }

// Solution on the extended box used by the flux probe.
const SolutionField& wide_solution() {
  static const SolutionField sol = [] {
    SolverConfig c = box(128);
    c.s_max = 34.0;
    return newton_solve(bump(), c);
  }();
  return sol;
}

}  // namespace

// ---------------------------------------------------------------------------
// measures and ladders

TEST(Measures, DensitiesAreBelowVolume) {
  for (const Point& s : {Point{2.0, 2.0}, Point{3.0, 11.0}, Point{12.0, 12.0}}) {
    EXPECT_LE(MeasureSpec::dmu().density(s, 2), 1.0);
    EXPECT_LE(MeasureSpec::dnu().density(s, 2), MeasureSpec::dmu().density(s, 2));
    EXPECT_DOUBLE_EQ(MeasureSpec::dV().density(s, 2), 1.0);
  }
  EXPECT_DOUBLE_EQ(MeasureSpec::dmu().exponent(2), -1.0 / 3.0);
  EXPECT_DOUBLE_EQ(MeasureSpec::dnu().exponent(2), -1.0);
  EXPECT_THROW(MeasureSpec::dnu().exponent(1), PreconditionError);
}

TEST(Moser, ZeroAndConstantFields) {
  const TorusGrid G = grid_of(box(32));
  const Ladder z = moser_trace(Field(G), MeasureSpec::dmu(), 2);
  for (double v : z.norm) EXPECT_EQ(v, 0.0);
  Field one(G);
  for (double& v : one.v) v = 1.0;
  for (const MeasureSpec& m : {MeasureSpec::dV(), MeasureSpec::dmu(), MeasureSpec::dnu()}) {
    const Ladder l = moser_trace(one, m, 2);
    for (double v : l.norm) EXPECT_NEAR(v, 1.0, 1e-14) << m.name();
    EXPECT_NEAR(l.final_gap(), 0.0, 1e-14);
  }
}

TEST(Moser, InfiniteMassIsRefused) {
  const TorusGrid G = grid_of(box(16));
  EXPECT_THROW(moser_trace(Field(G), MeasureSpec::weighted(1.0), 2), PreconditionError);
  EXPECT_NO_THROW(moser_trace(Field(G), MeasureSpec::weighted(0.5), 2));
}

TEST(Moser, LadderRecoversSupOfSolution) {
  const SolutionField& sol = bump_solution();
  for (const MeasureSpec& m : {MeasureSpec::dmu(), MeasureSpec::dnu()}) {
    const Ladder l = moser_trace(sol.phi, m, 2);
    EXPECT_TRUE(l.nondecreasing()) << m.name();
    EXPECT_LE(l.final_gap(), 0.02) << m.name();
    EXPECT_GT(l.sup, 0.0);
  }
}

TEST(Moser, LadderMatchesDirectQuadrature) {
  // h = s1 on the grid box with the dV measure; the normalized L^q norm is
  // (int s^(q-2) ds / int s^-2 ds)^(1/q) in the first factor
  const TorusGrid G = grid_of(box(256));
  const Field h = Field::sample(G, [](const Point& s) { return s[0]; });
  const Ladder l = moser_trace(h, MeasureSpec::dV(), 2, {2.0, 4.0});
  const double a = G.a, b = G.b;
  for (std::size_t m = 0; m < l.q.size(); ++m) {
    const double q = l.q[m];
    const double num = (std::pow(b, q - 1) - std::pow(a, q - 1)) / (q - 1);
    const double den = 1.0 / a - 1.0 / b;
    EXPECT_NEAR(l.norm[m], std::pow(num / den, 1.0 / q), 2e-3 * l.norm[m]) << q;
  }
}

// ---------------------------------------------------------------------------
// the forcing functional

TEST(IFunctional, ZeroForcingIsZero) {
  const IValue v = I_functional(constant_field(2, 0.0), 2, 2, 4.5, 2.0, 12.0);
  EXPECT_EQ(v.value, 0.0);
  EXPECT_FALSE(v.divergent);
}

TEST(IFunctional, CompactForcingIsStable) {
  const IValue v = I_functional(bump().F, 2, 2, 4.5, 2.0, 12.0);
  EXPECT_GT(v.value, 0.0);
  EXPECT_LE(v.rel_change, 1e-6);
  EXPECT_FALSE(v.divergent);
}

TEST(IFunctional, SlowTailIsFlagged) {
  const IValue v = I_functional(slow_forcing().F, 2, 2, 4.5, 2.0, 12.0);
  EXPECT_TRUE(v.divergent);
  const IValue t = I_functional(tailed_forcing().F, 2, 2, 4.5, 2.0, 1000.0);
  EXPECT_FALSE(t.divergent);
}

TEST(IFunctional, Preconditions) {
  EXPECT_THROW(I_functional(bump().F, 1, 2, 4.5, 2.0, 12.0), PreconditionError);
  EXPECT_THROW(I_functional(bump().F, 2, 2, 4.0, 2.0, 12.0), PreconditionError);
}

// ---------------------------------------------------------------------------
// norm report

TEST(NormReport, ZeroFamilyIsIdenticallyZero) {
  const SolutionFamily fam = epsilon_continuation(ForcingField{}, box(32), {1.0, 0.25, 0.0625});
  const EstimateReport rep = norm_report(fam, ForcingField{}, box(32), false);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& r : rep.rows) {
    EXPECT_LE(r.sup_phi, 1e-13);
    EXPECT_LE(r.sup_grad, 1e-11);
    EXPECT_LE(r.sup_lap, 1e-10);
  }
  EXPECT_TRUE(rep.uniform);
}

TEST(NormReport, BumpFamilyIsUniform) {
  const std::vector<double> sched = {1.0, 0.5, 0.25, 0.125, 0.0625};
  const SolutionFamily fam = epsilon_continuation(bump(), box(64), sched);
  const EstimateReport rep = norm_report(fam, bump(), box(64), true);
  EXPECT_TRUE(rep.uniform);
  EXPECT_LE(rep.ratio_phi, 2.0);
  EXPECT_LE(rep.ratio_grad, 2.0);
  EXPECT_LE(rep.ratio_lap, 2.0);
  EXPECT_FALSE(rep.truncation_flagged);
  for (const auto& r : rep.rows) EXPECT_GT(r.I_F, 0.0);
}

TEST(NormReport, UnderResolvedGridIsFlagged) {
  // grid 24 against its grid-12 audit: the bump is not resolved on the coarse grid
  SolverConfig c = box(24);
  const ForcingField f = bump_forcing({.amplitude = 0.5, .c1 = {6.0, 6.0}, .c2 = {8.0, 8.0}, .radius = 2.0});
  const SolutionFamily fam = epsilon_continuation(f, c, {1.0});
  const EstimateReport rep = norm_report(fam, f, c, true);
  EXPECT_TRUE(rep.truncation_flagged);
}

// ---------------------------------------------------------------------------
// auxiliary fields and the differential inequalities

TEST(Auxiliary, ZeroSolution) {
  const SolverConfig c = box(32);
  const SolutionField sol = newton_solve(Field(grid_of(c)), c);
  const AuxiliaryFields aux = auxiliary_fields(sol, Field(sol.grid), model_bounds());
  for (std::size_t i = 0; i < sol.grid.size(); ++i) {
    EXPECT_NEAR(aux.u.v[i], 0.0, 1e-20);
    EXPECT_NEAR(aux.w.v[i], 2.0, 1e-12);
    EXPECT_NEAR(aux.A_prime.v[i], aux.B + 2.0, 1e-13);
  }
}

TEST(Auxiliary, RangeOnBumpSolution) {
  const SolutionField& sol = bump_solution();
  const Field F = Field::sample(sol.grid, bump().F.value);
  const AuxiliaryFields aux = auxiliary_fields(sol, F, model_bounds());
  EXPECT_NEAR(aux.B, 2.0, 1e-9);
  for (std::size_t i = 0; i < sol.grid.size(); ++i) {
    EXPECT_GE(aux.A_prime.v[i], aux.B + 1.0);
    EXPECT_LE(aux.A_prime.v[i], aux.B + 3.0);
    EXPECT_GT(aux.w.v[i], 0.0);
    EXPECT_GE(aux.u.v[i], 0.0);
  }
  // A' is the derivative of A
  const double t = 0.3, dt = 1e-5;
  EXPECT_NEAR((aux.A_of(t + dt) - aux.A_of(t - dt)) / (2 * dt), aux.B + 2.0 - t / aux.C0, 1e-8);
}

TEST(Inequalities, TraceIsEqualityAtZero) {
  const SolverConfig c = box(32);
  const SolutionField sol = newton_solve(Field(grid_of(c)), c);
  const InequalityVerdict v =
      differential_inequality_check(sol, Field(sol.grid), model_bounds(), Inequality::trace);
  EXPECT_EQ(v.violations, 0);
  // tr_{g'} g = 2 and exp(-F) tr_g g' = 2
  EXPECT_NEAR(v.min_slack, 0.0, 1e-12);
  EXPECT_GT(v.checked, 0);
}

TEST(Inequalities, HoldOnBumpSolution) {
  const SolutionField& sol = bump_solution();
  const Field F = Field::sample(sol.grid, bump().F.value);
  const GeometryBounds B = model_bounds();
  const InequalityVerdict tr = differential_inequality_check(sol, F, B, Inequality::trace);
  EXPECT_EQ(tr.violations, 0);
  for (Inequality w : {Inequality::grad, Inequality::lap}) {
    const InequalityVerdict v = differential_inequality_check(sol, F, B, w);
    EXPECT_EQ(v.violations, 0) << int(w);
    EXPECT_EQ(v.violation_measure, 0.0);
    EXPECT_EQ(v.checked, 61 * 61);
  }
}

TEST(Inequalities, TraceIsAmGm) {
  // independent oracle: for a positive 2x2 Hermitian form the trace inequality
  // is AM-GM on its eigenvalues
  const SolutionField& sol = bump_solution();
  const TorusGrid& G = sol.grid;
  for (int i = 4; i < G.N; i += 9)
    for (int j = 4; j < G.N; j += 11) {
      Eigen::Matrix2d M = discrete_H(sol.phi, i, j);
      const Eigen::Matrix2d S = Eigen::Vector2d(G.s(i), G.s(j)).asDiagonal();
      M = S * M * S;
      const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(M).eigenvalues();
      ASSERT_GT(ev.minCoeff(), 0.0);
      EXPECT_GE(1.0 / ev(0) + 1.0 / ev(1), (ev(0) + ev(1)) / (ev(0) * ev(1)) * (1 - 1e-14));
      EXPECT_GE((ev(0) + ev(1)) / 2.0, std::sqrt(ev(0) * ev(1)));
    }
}

TEST(Inequalities, LapUndefinedAtOneFactorPair) {
  const SolutionField& sol = bump_solution();
  EXPECT_THROW(differential_inequality_check(sol, Field(sol.grid), model_bounds(), Inequality::lap, 1),
               PreconditionError);
}

// ---------------------------------------------------------------------------
// flux probe

TEST(Gaffney, ZeroSolutionHasNoFlux) {
  const SolverConfig c = box(32);
  const SolutionField sol = newton_solve(Field(grid_of(c)), c);
  const auto S = nested_truncations(sol.grid);
  ASSERT_FALSE(S.empty());
  const GaffneyProbe p = gaffney_probe(sol, Field(sol.grid), 1.0, S);
  for (const auto& r : p.rows) EXPECT_EQ(r.divergence, 0.0);
  EXPECT_TRUE(p.vanishing);
}

TEST(Gaffney, TruncationSequence) {
  const TorusGrid G = grid_of(box(128));
  const auto S = nested_truncations(G);
  ASSERT_EQ(S.size(), 2u);
  EXPECT_DOUBLE_EQ(S[0], 6.0);
  EXPECT_DOUBLE_EQ(S[1], 10.0);
  EXPECT_THROW(gaffney_probe(bump_solution(), Field(bump_solution().grid), 1.0, {40.0}), DomainError);
}

TEST(Gaffney, BumpFluxVanishesAndHalves) {
  const SolutionField& sol = wide_solution();
  const Field F = Field::sample(sol.grid, bump().F.value);
  const AuxiliaryFields aux = auxiliary_fields(sol, F, model_bounds());
  const auto S = nested_truncations(sol.grid);
  ASSERT_GE(S.size(), 3u);
  for (double p : {1.0, 2.0}) {
    const GaffneyProbe g = gaffney_probe(sol, aux.u, p, S);
    EXPECT_TRUE(g.vanishing) << p;
    if (p != 1.0) continue;
    for (std::size_t i = 1; i < g.rows.size(); ++i)
      EXPECT_LE(std::abs(g.rows[i].divergence), 0.5 * std::abs(g.rows[i - 1].divergence) + 1e-300);
  }
}

TEST(Gaffney, ControlsMatchClosedFormFlux) {
  const std::vector<double> S = {6.0, 10.0, 18.0, 34.0};
  const GaffneyProbe lg = control_probe(2.0, S, true);
  const GaffneyProbe r = control_probe(2.0, S, false);
  EXPECT_FALSE(lg.vanishing);
  EXPECT_FALSE(r.vanishing);
  for (std::size_t i = 0; i < S.size(); ++i) {
    EXPECT_NEAR(lg.rows[i].divergence, 2 * kPi / S[i], 1e-10);
    EXPECT_NEAR(lg.rows[i].divergence, lg.rows[i].outer_flux, 1e-10);
    EXPECT_NEAR(r.rows[i].divergence, 2 * kPi, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// cutoff

TEST(Cutoff, ChiProfile) {
  EXPECT_EQ(cutoff_chi(0.5), 1.0);
  EXPECT_EQ(cutoff_chi(1.0), 1.0);
  EXPECT_EQ(cutoff_chi(2.0), 0.0);
  EXPECT_EQ(cutoff_chi(3.0), 0.0);
  EXPECT_NEAR(cutoff_chi(1.5), 0.5, 1e-15);
  double sup = 0.0, prev = 1.0;
  for (int m = 1; m < 2000; ++m) {
    const double t = 1.0 + m / 2000.0;
    const double c = cutoff_chi(t);
    EXPECT_LE(c, prev);
    prev = c;
    sup = std::max(sup, std::abs(cutoff_chi_prime(t)));
    const double dt = 1e-6;
    EXPECT_NEAR(cutoff_chi_prime(t), (cutoff_chi(t + dt) - cutoff_chi(t - dt)) / (2 * dt), 1e-5);
  }
  EXPECT_LT(sup, 2.0);
}

TEST(Cutoff, DistanceGradientIsBounded) {
  // d = log rho; |grad d|_g^2 = sum s_j^2 (d_j d)^2 by central differences
  const GeometryBounds B = model_bounds();
  for (const Point& s : {Point{2.0, 2.0}, Point{5.0, 40.0}, Point{300.0, 7.0}}) {
    double g2 = 0.0;
    for (int j = 0; j < 2; ++j) {
      Point p = s, m = s;
      const double h = 1e-5 * s[j];
      p[j] += h;
      m[j] -= h;
      const double dj = (std::log(rho_of(p)) - std::log(rho_of(m))) / (2 * h);
      g2 += s[j] * s[j] * dj * dj;
    }
    EXPECT_LE(std::sqrt(g2), B.grad_ratio * (1 + 1e-8));
  }
}

TEST(Cutoff, CompactForcingIsUnchanged) {
  // the bump lives where log rho < log(7.5^2) < 5 = k
  const ForcingField fk = cutoff_approximation(bump(), 5.0);
  for (const Point& s : {Point{6.5, 6.5}, Point{4.5, 4.5}, Point{5.5, 5.3}, Point{11.0, 3.0}})
    EXPECT_EQ(fk.F(s), bump().F(s));
  EXPECT_THROW(cutoff_approximation(bump(), 0.5), PreconditionError);
}

TEST(Cutoff, TailedForcingConverges) {
  const CutoffStudy st = cutoff_study(tailed_forcing(), 2, 2, 2.0, 1000.0);
  EXPECT_TRUE(st.monotone);
  ASSERT_GE(st.doublings_needed, 0);
  EXPECT_LE(st.doublings_needed, 6);
  EXPECT_LT(st.I_diff.back(), 1e-3 * st.I_F);
}
