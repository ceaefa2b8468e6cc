#pragma once

// Diagnostics of the a priori estimate program on solved families: norm tables,
// normalized L^q ladders, the auxiliary quantities u and w with their
// differential inequalities, flux probes and the cutoff approximation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cuspma/errors.hpp"
#include "cuspma/fields.hpp"
#include "cuspma/functionals.hpp"
#include "cuspma/geometry.hpp"
#include "cuspma/grid.hpp"
#include "cuspma/ma_solver.hpp"

namespace cuspma {

// ---------------------------------------------------------------------------
// Measures

struct MeasureSpec {
  enum class Tag { dV, dmu, dnu, weighted };
  Tag tag = Tag::dV;
  double a = 0.0;  // exponent for weighted(a)

  static MeasureSpec dV() { return {Tag::dV, 0.0}; }
  static MeasureSpec dmu() { return {Tag::dmu, 0.0}; }
  static MeasureSpec dnu() { return {Tag::dnu, 0.0}; }
  static MeasureSpec weighted(double a) { return {Tag::weighted, a}; }

  /// Exponent e with density rho^e relative to dV.
  double exponent(int n) const {
    switch (tag) {
      case Tag::dV: return 0.0;
      case Tag::dmu: return -1.0 / (2.0 * n - 1.0);
      case Tag::dnu:
        if (n < 2) throw PreconditionError("dnu is undefined at n = 1");
        return -1.0 / (n - 1.0);
      case Tag::weighted: return a;
    }
    return 0.0;
  }
  /// Total mass on the untruncated model (each cusp factor: int s^(e-2) ds).
  bool finite_mass(int n) const { return exponent(n) < 1.0; }
  double density(const Point& s, int n) const { return std::pow(rho_of(s), exponent(n)); }

  std::string name() const {
    switch (tag) {
      case Tag::dV: return "dV";
      case Tag::dmu: return "dmu";
      case Tag::dnu: return "dnu";
      case Tag::weighted: return "weighted(" + std::to_string(a) + ")";
    }
    return "?";
  }
};

struct Ladder {
  std::vector<double> q;
  std::vector<double> norm;
  double sup = 0.0;

  bool nondecreasing(double rel = 1e-12) const {
    for (std::size_t i = 1; i < norm.size(); ++i)
      if (norm[i] < norm[i - 1] * (1.0 - rel)) return false;
    return true;
  }
  double final_gap() const { return sup == 0.0 ? 0.0 : 1.0 - norm.back() / sup; }
};

inline std::vector<double> default_q_schedule() { return {8, 16, 32, 64, 128, 256, 512}; }

/// Norms of h in L^q of the measure normalized to mass 1 on the grid box.
inline Ladder moser_trace(const Field& h, const MeasureSpec& m, int n,
                          const std::vector<double>& qs = default_q_schedule()) {
  if (!m.finite_mass(n))
    throw PreconditionError("moser_trace: " + m.name() + " has infinite total mass on the model");
  const TorusGrid& G = h.grid;
  Ladder out;
  out.q = qs;
  out.sup = h.sup_abs();
  double mass = 0.0;
  std::vector<double> w(G.size());
  for (int i = 0; i <= G.N; ++i)
    for (int j = 0; j <= (G.k == 2 ? G.N : 0); ++j) {
      w[G.index(i, j)] = dV_weight(G, i, j) * m.density(G.point(i, j), n);
      mass += w[G.index(i, j)];
    }
  for (double q : qs) {
    if (out.sup == 0.0) {
      out.norm.push_back(0.0);
      continue;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * std::pow(std::abs(h.v[i]) / out.sup, q);
    out.norm.push_back(out.sup * std::pow(sum / mass, 1.0 / q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise geometric quantities of a solution (k = n = 2)

struct SolutionGeometry {
  Derivatives d;
  Field grad2;  // |grad phi|_g^2 = sum s_j^2 phi_j^2
  Field lap;    // sum s_j^2 phi_jj
  Field tr;     // tr_g g' = n + lap
  Field tr_inv; // tr_{g'} g
};

inline Eigen::Matrix2d H_at(const Derivatives& d, const TorusGrid& G, int i, int j) {
  Eigen::Matrix2d H;
  H << 1.0 / (G.s(i) * G.s(i)) + d.H[0](i, j), d.H[1](i, j), d.H[2](i, j),
      1.0 / (G.s(j) * G.s(j)) + d.H[3](i, j);
  return H;
}

inline SolutionGeometry solution_geometry(const Field& phi) {
  const TorusGrid& G = phi.grid;
  if (G.k != 2) throw PreconditionError("solution_geometry: k = 2 only");
  SolutionGeometry out{derivatives(phi), Field(G), Field(G), Field(G), Field(G)};
  for (int i = 0; i <= G.N; ++i)
    for (int j = 0; j <= G.N; ++j) {
      const double s1 = G.s(i), s2 = G.s(j);
      out.grad2(i, j) = s1 * s1 * std::pow(out.d.g[0](i, j), 2) + s2 * s2 * std::pow(out.d.g[1](i, j), 2);
      out.lap(i, j) = s1 * s1 * out.d.H[0](i, j) + s2 * s2 * out.d.H[3](i, j);
      out.tr(i, j) = 2.0 + out.lap(i, j);
      const Eigen::Matrix2d H = H_at(out.d, G, i, j);
      const Eigen::Matrix2d g = Eigen::Vector2d(1.0 / (s1 * s1), 1.0 / (s2 * s2)).asDiagonal();
      out.tr_inv(i, j) = (H.inverse() * g).trace();
    }
  return out;
}

// ---------------------------------------------------------------------------
// Norm report

struct NormRow {
  double epsilon = 0.0;
  double sup_phi = 0.0;
  double sup_grad = 0.0;  // sup |grad phi|_g
  double sup_lap = 0.0;   // sup |Laplacian phi|
  double sup_tr = 0.0;    // sup tr_g g'
  double w3p = 0.0;       // weighted third-difference surrogate
  double I_F = 0.0;
  double coarse_rel = 0.0;  // max relative change of the norm columns against an N/2 solve
};

struct EstimateReport {
  std::vector<NormRow> rows;
  double ratio_phi = 0.0, ratio_grad = 0.0, ratio_lap = 0.0;  // max / median
  bool uniform = true;
  bool truncation_flagged = false;
  double uniformity_factor = 2.0;
  double truncation_budget = 0.05;
};

/// int |D^3 phi|^p0 rho^((p0-2)/(2n-2)) dV over the interior, with
/// |D^3 phi|^2 = sum over index triples of (s_a s_b s_c phi_abc)^2.
inline double w3p_surrogate(const Field& phi, double p0, int n = 2) {
  const TorusGrid& G = phi.grid;
  const Derivatives d = derivatives(phi);
  const Field t111 = partial(d.H[0], 0), t112 = partial(d.H[0], 1);
  const Field t122 = partial(d.H[3], 0), t222 = partial(d.H[3], 1);
  double sum = 0.0;
  for (int i = 1; i < G.N; ++i)
    for (int j = 1; j < G.N; ++j) {
      const double a = G.s(i), b = G.s(j);
      const double q = std::pow(a * a * a * t111(i, j), 2) + 3.0 * std::pow(a * a * b * t112(i, j), 2) +
                       3.0 * std::pow(a * b * b * t122(i, j), 2) + std::pow(b * b * b * t222(i, j), 2);
      sum += dV_weight(G, i, j) * std::pow(q, 0.5 * p0) * std::pow(a * b, (p0 - 2.0) / (2.0 * n - 2.0));
    }
  return sum;
}

inline NormRow norm_row(const SolutionField& sol, double I_F, double p0) {
  NormRow r;
  r.epsilon = sol.epsilon;
  r.I_F = I_F;
  r.sup_phi = sol.phi.sup_abs();
  const SolutionGeometry g = solution_geometry(sol.phi);
  for (std::size_t i = 0; i < g.grad2.v.size(); ++i) {
    r.sup_grad = std::max(r.sup_grad, std::sqrt(g.grad2.v[i]));
    r.sup_lap = std::max(r.sup_lap, std::abs(g.lap.v[i]));
    r.sup_tr = std::max(r.sup_tr, g.tr.v[i]);
  }
  r.w3p = w3p_surrogate(sol.phi, p0);
  return r;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double max_over_median(const std::vector<double>& v) {
  const double med = median(v);
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx == 0.0) return 1.0;  // an all-zero column is uniform
  return med == 0.0 ? std::numeric_limits<double>::infinity() : mx / med;
}

/// Per-eps norm table with the uniformity verdict. With `audit`, every member
/// is re-solved on the N/2 grid and the relative change of the norms is
/// compared with the truncation budget.
inline EstimateReport norm_report(const SolutionFamily& fam, const ForcingField& f,
                                  const SolverConfig& cfg, bool audit = true) {
  EstimateReport rep;
  const double I_F =
      f.F.dim == 2 ? I_functional(f.F, 2, 2, f.p0, cfg.s_min, cfg.s_max).value : 0.0;
  for (const auto& m : fam.members) rep.rows.push_back(norm_row(m.sol, I_F, f.p0));
  if (audit && cfg.grid >= 16) {
    SolverConfig coarse = cfg;
    coarse.grid = cfg.grid / 2;
    const Field F = Field::sample(grid_of(coarse), f.F.value);
    const Field* warm = nullptr;
    SolutionField prev(grid_of(coarse));
    for (std::size_t m = 0; m < rep.rows.size(); ++m) {
      coarse.epsilon = rep.rows[m].epsilon;
      SolutionField c = newton_solve(F, coarse, warm);
      const NormRow cr = norm_row(c, I_F, f.p0);
      auto rel = [](double fine, double crs) {
        return fine == 0.0 && crs == 0.0 ? 0.0 : std::abs(fine - crs) / std::max(std::abs(fine), 1e-300);
      };
      rep.rows[m].coarse_rel = std::max({rel(rep.rows[m].sup_phi, cr.sup_phi),
                                         rel(rep.rows[m].sup_grad, cr.sup_grad),
                                         rel(rep.rows[m].sup_lap, cr.sup_lap)});
      if (rep.rows[m].coarse_rel > rep.truncation_budget) rep.truncation_flagged = true;
      prev = std::move(c);
      warm = &prev.phi;
    }
  }
  std::vector<double> a, b, c;
  for (const auto& r : rep.rows) {
    a.push_back(r.sup_phi);
    b.push_back(r.sup_grad);
    c.push_back(r.sup_lap);
  }
  if (!rep.rows.empty()) {
    rep.ratio_phi = max_over_median(a);
    rep.ratio_grad = max_over_median(b);
    rep.ratio_lap = max_over_median(c);
    rep.uniform = rep.ratio_phi <= rep.uniformity_factor && rep.ratio_grad <= rep.uniformity_factor &&
                  rep.ratio_lap <= rep.uniformity_factor;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Auxiliary fields

struct AuxiliaryFields {
  double B = 0.0;       // curvature constant used in A(t)
  double C0 = 1.0;      // 1 + ||phi||
  double A_w = 0.0;     // constant A of w
  double theta = 0.0;
  double C0_w = 0.0;    // (|R| + 2n) e^(A ||phi||)
  double C_theta = 0.0; // max_w ((2nA + 1) w - theta w^(n/(n-1)))
  Field u, w, A_prime;

  explicit AuxiliaryFields(const TorusGrid& g) : u(g), w(g), A_prime(g) {}

  double A_of(double t) const { return (B + 2.0) * t - t * t / (2.0 * C0); }
};

inline AuxiliaryFields auxiliary_fields(const SolutionField& sol, const Field& F,
                                        const GeometryBounds& bounds, int n = 2) {
  const TorusGrid& G = sol.grid;
  AuxiliaryFields aux(G);
  aux.B = bounds.curvature_lower;
  const double sup_phi = sol.phi.sup_abs();
  aux.C0 = 1.0 + sup_phi;
  // -inf R_{i ibar l lbar} over i != l vanishes on the product model; A >= that + 1,
  // and B + 1 keeps the same A for both auxiliary functions.
  aux.A_w = aux.B + 1.0;
  const double sup_F = F.sup_abs();
  aux.theta = 0.5 * std::exp(-(aux.A_w * sup_phi + sup_F + sol.epsilon * sup_phi) / (n - 1.0));
  aux.C0_w = (bounds.scalar + 2.0 * n) * std::exp(aux.A_w * sup_phi);
  // (2nA+1) w - theta w^(n/(n-1)) is maximal at w* = ((2nA+1)(n-1) / (n theta))^(n-1)
  const double c = 2.0 * n * aux.A_w + 1.0, e = n / (n - 1.0);
  const double wstar = std::pow(c / (e * aux.theta), n - 1.0);
  aux.C_theta = c * wstar - aux.theta * std::pow(wstar, e);
  const SolutionGeometry geo = solution_geometry(sol.phi);
  for (std::size_t i = 0; i < G.size(); ++i) {
    const double phi = sol.phi.v[i];
    aux.A_prime.v[i] = aux.B + 2.0 - phi / aux.C0;
    aux.u.v[i] = std::exp(-aux.A_of(phi)) * geo.grad2.v[i];
    aux.w.v[i] = std::exp(-aux.A_w * phi) * geo.tr.v[i];
  }
  return aux;
}

// ---------------------------------------------------------------------------
// Differential inequalities

enum class Inequality { grad, lap, trace };

struct InequalityVerdict {
  Inequality which = Inequality::trace;
  int checked = 0;
  int violations = 0;          // lhs < rhs beyond the tolerance band
  int band_hits = 0;           // lhs < rhs but inside the band
  double violation_measure = 0.0;  // dV-mass of the violation set
  double worst_margin = std::numeric_limits<double>::infinity();  // min (lhs - rhs + band)
  double min_slack = std::numeric_limits<double>::infinity();     // min (lhs - rhs)
  double band_scale = 0.0;
  std::vector<std::pair<int, int>> where;
};

/// Delta' h = tr(H^-1 D^2 h) at interior node (i, j), D^2 h by the operator's stencil.
inline double laplacian_prime(const Field& h, const Eigen::Matrix2d& Hinv, int i, int j) {
  const double dh = h.grid.h(), h2 = dh * dh;
  const double a = (h(i + 1, j) - 2.0 * h(i, j) + h(i - 1, j)) / h2;
  const double b = (h(i, j + 1) - 2.0 * h(i, j) + h(i, j - 1)) / h2;
  const double c = (h(i + 1, j + 1) - h(i + 1, j - 1) - h(i - 1, j + 1) + h(i - 1, j - 1)) / (4.0 * h2);
  return Hinv(0, 0) * a + 2.0 * Hinv(0, 1) * c + Hinv(1, 1) * b;
}

/// Magnitude of the scaled fourth differences of phi at (i, j).
inline double fourth_difference(const Field& phi, int i, int j) {
  const TorusGrid& G = phi.grid;
  if (i < 2 || j < 2 || i > G.N - 2 || j > G.N - 2) return 0.0;
  const double h4 = std::pow(G.h(), 4);
  const double a = (phi(i + 2, j) - 4.0 * phi(i + 1, j) + 6.0 * phi(i, j) - 4.0 * phi(i - 1, j) + phi(i - 2, j)) / h4;
  const double b = (phi(i, j + 2) - 4.0 * phi(i, j + 1) + 6.0 * phi(i, j) - 4.0 * phi(i, j - 1) + phi(i, j - 2)) / h4;
  return std::pow(G.s(i), 4) * std::abs(a) + std::pow(G.s(j), 4) * std::abs(b);
}

/// Pointwise check of the selected inequality at interior nodes (nodes adjacent
/// to the edges are skipped for grad and lap, whose left sides need two more
/// derivatives). The band is band_c * h^2 * (1 + scaled fourth differences) for
/// grad and lap; the trace check uses a relative band of 1e-8.
inline InequalityVerdict differential_inequality_check(const SolutionField& sol, const Field& F,
                                                       const GeometryBounds& bounds, Inequality which,
                                                       int n = 2, double band_c = 10.0) {
  if (n < 2 && which == Inequality::lap)
    throw PreconditionError("differential_inequality_check: lap is undefined at n = 1");
  const TorusGrid& G = sol.grid;
  InequalityVerdict v;
  v.which = which;
  const double h2 = G.h() * G.h();
  const AuxiliaryFields aux = auxiliary_fields(sol, F, bounds, n);
  const SolutionGeometry geo = solution_geometry(sol.phi);
  const Derivatives dF = derivatives(F);

  // constants of the gradient inequality
  double C1 = 0, C2 = 0, C3 = 0, C4 = 0;
  if (which == Inequality::grad) {
    double minA = std::numeric_limits<double>::infinity(), maxA = -minA, supFeff = -minA;
    for (std::size_t i = 0; i < G.size(); ++i) {
      const double A = aux.A_of(sol.phi.v[i]);
      minA = std::min(minA, A);
      maxA = std::max(maxA, A);
      supFeff = std::max(supFeff, F.v[i] + sol.epsilon * sol.phi.v[i]);
    }
    const double pre = n * std::pow(std::exp(-supFeff) / (aux.C0 * std::pow(n - 1.0, n - 1.0)), 1.0 / n);
    const double C1p = pre * std::exp(minA / n);
    C1 = 0.5 * C1p;
    const double a = (n + 2.0) * (aux.B + 3.0) + 2.0;
    // K = max_u (a u - (C1'/2) u^(1+1/n)), attained at u* = (a / ((C1'/2)(1+1/n)))^n
    const double ustar = std::pow(a / (0.5 * C1p * (1.0 + 1.0 / n)), n);
    const double K = a * ustar - 0.5 * C1p * std::pow(ustar, 1.0 + 1.0 / n);
    C2 = K + 2.0 * n * std::exp(-minA);
    C3 = std::exp(-maxA);
    C4 = 2.0 * std::exp(-minA / 2.0);
  }

  const int lo = which == Inequality::trace ? 1 : 2;
  const int hi = which == Inequality::trace ? G.N - 1 : G.N - 2;
  for (int i = lo; i <= hi; ++i)
    for (int j = lo; j <= hi; ++j) {
      const Eigen::Matrix2d H = discrete_H(sol.phi, i, j);
      const Eigen::Matrix2d Hinv = H.inverse();
      const double s1 = G.s(i), s2 = G.s(j);
      double lhs = 0, rhs = 0, band = 0;
      if (which == Inequality::trace) {
        const double tr = s1 * s1 * H(0, 0) + s2 * s2 * H(1, 1);
        const double tr_inv = Hinv(0, 0) / (s1 * s1) + Hinv(1, 1) / (s2 * s2);
        const double Feff = F(i, j) + sol.epsilon * sol.phi(i, j);
        lhs = tr_inv;
        rhs = std::exp(-Feff / (n - 1.0)) * std::pow(tr, 1.0 / (n - 1.0));
        band = 1e-8 * std::abs(rhs);
      } else if (which == Inequality::grad) {
        const double u = aux.u(i, j);
        const double gradF = std::sqrt(s1 * s1 * dF.g[0](i, j) * dF.g[0](i, j) + s2 * s2 * dF.g[1](i, j) * dF.g[1](i, j));
        lhs = laplacian_prime(aux.u, Hinv, i, j);
        rhs = C1 * std::pow(u, 1.0 + 1.0 / n) - C2 + C3 * geo.tr(i, j) - C4 * gradF * std::sqrt(u);
        band = band_c * h2 * (1.0 + fourth_difference(sol.phi, i, j));
      } else {
        const double w = aux.w(i, j);
        const double lapF = s1 * s1 * dF.H[0](i, j) + s2 * s2 * dF.H[3](i, j);
        lhs = laplacian_prime(aux.w, Hinv, i, j);
        rhs = aux.theta * std::pow(w, n / (n - 1.0)) - (aux.C0_w + aux.C_theta) -
              std::exp(-aux.A_w * sol.phi(i, j)) * lapF;
        band = band_c * h2 * (1.0 + fourth_difference(sol.phi, i, j));
      }
      ++v.checked;
      v.band_scale = std::max(v.band_scale, band);
      v.min_slack = std::min(v.min_slack, lhs - rhs);
      v.worst_margin = std::min(v.worst_margin, lhs - rhs + band);
      if (lhs < rhs - band) {
        ++v.violations;
        v.violation_measure += dV_weight(G, i, j);
        v.where.emplace_back(i, j);
      } else if (lhs < rhs) {
        ++v.band_hits;
      }
    }
  return v;
}

// ---------------------------------------------------------------------------
// Flux probe for the integration by parts on the complete model

struct GaffneyRow {
  double S = 0.0;
  double divergence = 0.0;  // int_{[a,S]^2} div' X dV' with the inner-edge flux removed
  double outer_flux = 0.0;  // flux through {s_1 = S} and {s_2 = S}
};

struct GaffneyProbe {
  std::vector<GaffneyRow> rows;
  bool vanishing = false;  // final |divergence| < threshold
  double threshold = 1e-8;
};

namespace detail {

/// Components V_a = cof(H)_ab d_b u (times u^p) of the s-divergence form of
/// div'(u^p grad' u) dV' = d_a V_a ds dtheta.
inline std::vector<Field> flux_field(const Field& phi, const Field& u, double p) {
  const TorusGrid& G = phi.grid;
  const Derivatives d = derivatives(phi);
  const Field u1 = partial(u, 0), u2 = partial(u, 1);
  std::vector<Field> V(2, Field(G));
  for (int i = 0; i <= G.N; ++i)
    for (int j = 0; j <= G.N; ++j) {
      const Eigen::Matrix2d H = H_at(d, G, i, j);
      const double up = p == 0.0 ? 1.0 : std::pow(std::abs(u(i, j)), p);
      V[0](i, j) = up * (H(1, 1) * u1(i, j) - H(0, 1) * u2(i, j));
      V[1](i, j) = up * (-H(0, 1) * u1(i, j) + H(0, 0) * u2(i, j));
    }
  return V;
}

/// Trapezoid over nodes lo..hi along one axis with spacing h.
template <class Get>
double trapezoid(Get&& f, int lo, int hi, double h) {
  double s = 0.0;
  for (int m = lo; m <= hi; ++m) s += (m == lo || m == hi ? 0.5 : 1.0) * f(m);
  return s * h;
}

inline GaffneyRow gaffney_row(const std::vector<Field>& V, int iS) {
  const TorusGrid& G = V[0].grid;
  const double h = G.h(), tau = 4.0 * std::numbers::pi * std::numbers::pi;
  const Field d1 = partial(V[0], 0), d2 = partial(V[1], 1);
  GaffneyRow r;
  r.S = G.s(iS);
  double div = 0.0;
  for (int i = 0; i <= iS; ++i)
    for (int j = 0; j <= iS; ++j) {
      const double w = (i == 0 || i == iS ? 0.5 : 1.0) * (j == 0 || j == iS ? 0.5 : 1.0) * h * h;
      div += w * (d1(i, j) + d2(i, j));
    }
  const double inner = -trapezoid([&](int m) { return V[0](0, m); }, 0, iS, h) -
                       trapezoid([&](int m) { return V[1](m, 0); }, 0, iS, h);
  r.outer_flux = tau * (trapezoid([&](int m) { return V[0](iS, m); }, 0, iS, h) +
                        trapezoid([&](int m) { return V[1](m, iS); }, 0, iS, h));
  r.divergence = tau * (div - inner);
  return r;
}

}  // namespace detail

/// Truncated divergence integrals of u^p grad' u over [s_min, S]^2 for nested S.
inline GaffneyProbe gaffney_probe(const SolutionField& sol, const Field& u, double p,
                                  const std::vector<double>& S_list) {
  GaffneyProbe out;
  const TorusGrid& G = sol.grid;
  const auto V = detail::flux_field(sol.phi, u, p);
  for (double S : S_list) {
    const int iS = static_cast<int>(std::lround((S - G.a) / G.h()));
    if (iS < 2 || iS > G.N) throw DomainError("gaffney_probe: truncation outside the grid");
    out.rows.push_back(detail::gaffney_row(V, iS));
  }
  out.vanishing = !out.rows.empty() && std::abs(out.rows.back().divergence) < out.threshold;
  return out;
}

/// Nested truncations S = s_min + base * 2^m inside the grid.
inline std::vector<double> nested_truncations(const TorusGrid& G, double base = 4.0) {
  std::vector<double> out;
  for (double L = base; G.a + L <= G.b - 2.0 * G.h() + 1e-12; L *= 2.0) out.push_back(G.a + L);
  return out;
}

/// Control fields on one cusp factor: the flux of X through {s = S} in closed
/// form. grad log rho gives 2 pi / S, grad rho gives 2 pi.
inline double control_flux_log_rho(double S) { return 2.0 * std::numbers::pi / S; }
inline double control_flux_rho(double) { return 2.0 * std::numbers::pi; }

/// The same controls evaluated by quadrature of the divergence over [a, S] plus
/// the inner flux (k = 1, X_s = s^2 d_s h, density s^-2).
inline GaffneyProbe control_probe(double a, const std::vector<double>& S_list, bool log_rho) {
  GaffneyProbe out;
  for (double S : S_list) {
    // s^-2 X^s = d_s h; its s-derivative is h''
    auto dh = [&](double s) { return log_rho ? 1.0 / s : 1.0; };
    auto d2h = [&](double s) { return log_rho ? -1.0 / (s * s) : 0.0; };
    const quad::Rule r = quad::composite(a, S, 32, 8);
    const double div = r.integrate(d2h);
    GaffneyRow row;
    row.S = S;
    row.divergence = 2.0 * std::numbers::pi * (div + dh(a));
    row.outer_flux = log_rho ? control_flux_log_rho(S) : control_flux_rho(S);
    out.rows.push_back(row);
  }
  out.vanishing = !out.rows.empty() && std::abs(out.rows.back().divergence) < out.threshold;
  return out;
}

// ---------------------------------------------------------------------------
// Cutoff approximation

/// Smooth transition: chi = 1 on t <= 1, chi = 0 on t >= 2, max |chi'| ~ 1.53.
inline double cutoff_chi(double t, double a = 0.5) {
  if (t <= 1.0) return 1.0;
  if (t >= 2.0) return 0.0;
  const double p = std::exp(-a / (2.0 - t)), q = std::exp(-a / (t - 1.0));
  return p / (p + q);
}

inline double cutoff_chi_prime(double t, double a = 0.5) {
  if (t <= 1.0 || t >= 2.0) return 0.0;
  const double x = 2.0 - t, y = t - 1.0;
  const double p = std::exp(-a / x), q = std::exp(-a / y);
  const double dp = -p * a / (x * x), dq = q * a / (y * y);  // d/dt
  return (dp * q - p * dq) / ((p + q) * (p + q));
}

/// F_k = chi(log(rho) / k) F.
inline ForcingField cutoff_approximation(const ForcingField& f, double k) {
  if (!(k >= 1.0)) throw PreconditionError("cutoff_approximation: k >= 1");
  ForcingField out = f;
  out.name = f.name + "_cut" + std::to_string(k);
  const ClosedForm F = f.F;
  out.F.name = out.name;
  out.F.value = [F, k](const Point& s) { return cutoff_chi(std::log(rho_of(s)) / k) * F(s); };
  out.F.gradient = [F, k](const Point& s) -> Eigen::VectorXd {
    const double t = std::log(rho_of(s)) / k;
    Eigen::VectorXd g = cutoff_chi(t) * F.grad(s);
    const double c = cutoff_chi_prime(t) / k * F(s);
    for (int j = 0; j < F.dim; ++j) g(j) += c / s[j];
    return g;
  };
  out.F.hessian = nullptr;
  return out;
}

/// F - G as a closed form.
inline ClosedForm difference(const ClosedForm& a, const ClosedForm& b) {
  ClosedForm f;
  f.name = a.name + "-" + b.name;
  f.dim = a.dim;
  f.value = [a, b](const Point& s) { return a(s) - b(s); };
  f.gradient = [a, b](const Point& s) -> Eigen::VectorXd { return a.grad(s) - b.grad(s); };
  return f;
}

struct CutoffStudy {
  std::vector<double> k;
  std::vector<double> I_diff;  // I(F - F_k, p0)
  double I_F = 0.0;
  bool monotone = true;
  int doublings_needed = -1;  // first doubling index with I_diff < 1e-3 I_F
};

inline CutoffStudy cutoff_study(const ForcingField& f, int n, int k_factors, double s_min,
                                double s_max, int max_doublings = 6) {
  CutoffStudy st;
  st.I_F = I_functional(f.F, n, k_factors, f.p0, s_min, s_max).value;
  double k = 1.0;
  for (int m = 0; m <= max_doublings; ++m, k *= 2.0) {
    const ForcingField fk = cutoff_approximation(f, k);
    const double v = I_functional(difference(f.F, fk.F), n, k_factors, f.p0, s_min, s_max).value;
    if (!st.I_diff.empty() && v > st.I_diff.back() * (1.0 + 1e-12) + 1e-300) st.monotone = false;
    st.k.push_back(k);
    st.I_diff.push_back(v);
    if (st.doublings_needed < 0 && v < 1e-3 * st.I_F) st.doublings_needed = m;
  }
  return st;
}

/// Forcings with tails, for the cutoff and tail-audit studies.
inline ForcingField tailed_forcing(double amplitude = 1.0) {
  ForcingField f;
  f.name = "tailed";
  f.F = rho_power(2, -2.0, amplitude, "rho^-2");
  f.compact = false;
  return f;
}

inline ForcingField slow_forcing(double amplitude = 1.0) {
  ForcingField f;
  f.name = "slow";
  f.F = rho_power(2, -0.25, amplitude, "rho^-1/4");
  f.compact = false;
  return f;
}

}  // namespace cuspma
