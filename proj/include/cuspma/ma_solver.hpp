#pragma once

// Torus-invariant reduction of the epsilon-perturbed complex Monge-Ampere
// equation on [s_min, s_max]^k, Dirichlet closure, damped Newton with an exact
// sparse Jacobian and continuation in epsilon.
//
// With H = diag(s^-2) + D^2 phi the reduced equation reads
//   det H = e^(F + eps phi) prod s_j^-2      (k = n = 2)
//   phi_ss = (e^(F + eps phi) - 1) / s^2      (k = n = 1).
// Newton works with the normalized residual det(S H S) - e^(F + eps phi),
// S = diag(s), which is of unit scale everywhere on the box.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "cuspma/errors.hpp"
#include "cuspma/fields.hpp"
#include "cuspma/functionals.hpp"
#include "cuspma/geometry.hpp"
#include "cuspma/grid.hpp"
#include "cuspma/quasi_atlas.hpp"

namespace cuspma {

struct SolverConfig {
  double epsilon = 1.0;
  double newton_tol = 1e-10;
  int max_iter = 50;
  double damping = 0.5;
  int grid = 64;
  double s_min = 2.0;
  double s_max = 12.0;
  std::string bc = "dirichlet";
  bool require_compatibility = false;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon", "must lie in (0, 1]");
    if (!(newton_tol > 0.0)) throw ConfigError("newton_tol", "must be positive");
    if (max_iter < 1) throw ConfigError("max_iter", "must be >= 1");
    if (!(damping > 0.0 && damping < 1.0)) throw ConfigError("damping", "must lie in (0, 1)");
    if (grid < 8) throw ConfigError("grid", "must be >= 8");
    if (!(s_min >= 1.0)) throw ConfigError("s_min", "must be >= 1");
    if (!(s_max > s_min)) throw ConfigError("s_max", "must exceed s_min");
    if (bc != "dirichlet") throw ConfigError("bc", "only \"dirichlet\" is supported");
  }
};

struct ForcingField {
  std::string name = "zero";
  ClosedForm F = zero_field(2);
  double p0 = 6.0;
  bool compact = true;  // vanishes outside F.support
};

struct EigenLocation {
  double value = std::numeric_limits<double>::infinity();
  int i = -1, j = -1;
  Point s;
};

struct SolutionField {
  TorusGrid grid;
  Field phi;
  Field residual;  // det H - e^(F+eps phi) prod s^-2 at interior nodes (0 on edges)
  double epsilon = 1.0;
  int iterations = 0;
  std::vector<double> residual_log;  // normalized residual sup-norm per iterate
  double final_residual = 0.0;       // normalized
  EigenLocation min_eig;
  bool converged = false;

  explicit SolutionField(const TorusGrid& g) : grid(g), phi(g), residual(g) {}
};

/// Newton failure with the last iterate attached.
class SolveFailure : public NonConvergenceError {
 public:
  SolveFailure(const std::string& what, SolutionField last)
      : NonConvergenceError(what), last_(std::move(last)) {}
  const SolutionField& last() const { return last_; }

 private:
  SolutionField last_;
};

/// Line search could not find an admissible step.
class StepRejected : public SolveFailure {
 public:
  using SolveFailure::SolveFailure;
};

inline TorusGrid grid_of(const SolverConfig& c, int k = 2) {
  return TorusGrid::make(k, c.s_min, c.s_max, c.grid);
}

// ---------------------------------------------------------------------------
// Discrete operator

/// H = diag(s^-2) + D^2 phi at an interior node, by the operator's stencil.
inline Eigen::Matrix2d discrete_H(const Field& phi, int i, int j) {
  const TorusGrid& G = phi.grid;
  const double h = G.h(), h2 = h * h;
  const double s1 = G.s(i), s2 = G.s(j);
  Eigen::Matrix2d H;
  H(0, 0) = 1.0 / (s1 * s1) + (phi(i + 1, j) - 2.0 * phi(i, j) + phi(i - 1, j)) / h2;
  H(1, 1) = 1.0 / (s2 * s2) + (phi(i, j + 1) - 2.0 * phi(i, j) + phi(i, j - 1)) / h2;
  H(0, 1) = H(1, 0) =
      (phi(i + 1, j + 1) - phi(i + 1, j - 1) - phi(i - 1, j + 1) + phi(i - 1, j - 1)) / (4.0 * h2);
  return H;
}

inline double min_eig2(const Eigen::Matrix2d& H) {
  const double m = 0.5 * (H(0, 0) + H(1, 1));
  const double d = 0.5 * (H(0, 0) - H(1, 1));
  return m - std::sqrt(d * d + H(0, 1) * H(0, 1));
}

struct Residuals {
  Field raw;         // unnormalized
  Field normalized;  // det(S H S) - e^(F + eps phi)
  double sup_normalized = 0.0;
  bool positive = true;  // H > 0 at every interior node
};

/// The reduced operator at interior nodes.
inline Residuals reduce_ma_operator(const Field& phi, const Field& F, double eps) {
  const TorusGrid& G = phi.grid;
  Residuals r{Field(G), Field(G), 0.0, true};
  const double h2 = G.h() * G.h();
  if (G.k == 1) {
    for (int i = 1; i < G.N; ++i) {
      const double s = G.s(i);
      const double pss = (phi(i + 1) - 2.0 * phi(i) + phi(i - 1)) / h2;
      const double e = std::exp(F(i) + eps * phi(i));
      r.raw(i) = pss - (e - 1.0) / (s * s);
      r.normalized(i) = s * s * pss + 1.0 - e;
      r.sup_normalized = std::max(r.sup_normalized, std::abs(r.normalized(i)));
      if (!(1.0 / (s * s) + pss > 0.0)) r.positive = false;
    }
    return r;
  }
  for (int i = 1; i < G.N; ++i) {
    for (int j = 1; j < G.N; ++j) {
      const double s1 = G.s(i), s2 = G.s(j);
      const Eigen::Matrix2d H = discrete_H(phi, i, j);
      const double e = std::exp(F(i, j) + eps * phi(i, j));
      const double det = H.determinant();
      r.raw(i, j) = det - e / (s1 * s1 * s2 * s2);
      r.normalized(i, j) = s1 * s1 * s2 * s2 * det - e;
      r.sup_normalized = std::max(r.sup_normalized, std::abs(r.normalized(i, j)));
      if (!(min_eig2(H) > 0.0)) r.positive = false;
    }
  }
  return r;
}

inline Residuals reduce_ma_operator(const Field& phi, const ClosedForm& F, double eps) {
  return reduce_ma_operator(phi, Field::sample(phi.grid, F.value), eps);
}

/// The complex-coordinate form det(g + ddbar phi) e^(-F - eps phi) / det(g) - 1
/// at a point, with ddbar phi assembled from the real s-Hessian through
/// z_j = exp(-(s_j + i theta_j) / 2): phi_{j kbar} = phi_{s_j s_k} / (z_j conj(z_k)).
inline double complex_form_residual(const Eigen::Matrix2d& hess_s, const Point& s, double phi,
                                    double F, double eps, double theta1 = 0.3, double theta2 = 1.1) {
  const cplx z1 = std::exp(-cplx(s[0], theta1) / 2.0);
  const cplx z2 = std::exp(-cplx(s[1], theta2) / 2.0);
  const cplx z[2] = {z1, z2};
  Eigen::Matrix2cd g = Eigen::Matrix2cd::Zero(), gp;
  for (int a = 0; a < 2; ++a) g(a, a) = 1.0 / (std::norm(z[a]) * s[a] * s[a]);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) gp(a, b) = g(a, b) + hess_s(a, b) / (z[a] * std::conj(z[b]));
  return (gp.determinant() / g.determinant()).real() * std::exp(-F - eps * phi) - 1.0;
}

/// Exact Jacobian of the normalized residual with respect to interior values.
inline Eigen::SparseMatrix<double> ma_jacobian(const Field& phi, const Field& F, double eps) {
  const TorusGrid& G = phi.grid;
  const int N = G.N, m = N - 1;
  const double h2 = G.h() * G.h();
  std::vector<Eigen::Triplet<double>> t;
  auto id = [&](int i, int j) { return G.k == 1 ? i - 1 : (i - 1) * m + (j - 1); };
  if (G.k == 1) {
    t.reserve(3 * m);
    for (int i = 1; i < N; ++i) {
      const double s2 = G.s(i) * G.s(i);
      const double e = std::exp(F(i) + eps * phi(i));
      t.emplace_back(id(i, 0), id(i, 0), -2.0 * s2 / h2 - eps * e);
      if (i > 1) t.emplace_back(id(i, 0), id(i - 1, 0), s2 / h2);
      if (i < N - 1) t.emplace_back(id(i, 0), id(i + 1, 0), s2 / h2);
    }
    Eigen::SparseMatrix<double> J(m, m);
    J.setFromTriplets(t.begin(), t.end());
    return J;
  }
  t.reserve(9 * m * m);
  for (int i = 1; i < N; ++i) {
    for (int j = 1; j < N; ++j) {
      const double s1 = G.s(i), s2 = G.s(j);
      const double w = s1 * s1 * s2 * s2;
      const Eigen::Matrix2d H = discrete_H(phi, i, j);
      const double e = std::exp(F(i, j) + eps * phi(i, j));
      const int row = id(i, j);
      auto add = [&](int a, int b, double v) {
        if (a >= 1 && a < N && b >= 1 && b < N) t.emplace_back(row, id(a, b), v);
      };
      // d det / d H11 = H22, d det / d H22 = H11, d det / d H12 = -2 H12
      add(i, j, w * (-2.0 * H(1, 1) - 2.0 * H(0, 0)) / h2 - eps * e);
      add(i + 1, j, w * H(1, 1) / h2);
      add(i - 1, j, w * H(1, 1) / h2);
      add(i, j + 1, w * H(0, 0) / h2);
      add(i, j - 1, w * H(0, 0) / h2);
      const double c = -2.0 * H(0, 1) * w / (4.0 * h2);
      add(i + 1, j + 1, c);
      add(i - 1, j - 1, c);
      add(i + 1, j - 1, -c);
      add(i - 1, j + 1, -c);
    }
  }
  Eigen::SparseMatrix<double> J(m * m, m * m);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

// ---------------------------------------------------------------------------
// Positivity

struct PositivityVerdict {
  bool positive = true;
  EigenLocation min_eig;
};

/// Minimum eigenvalue of H over the grid. Interior nodes use the operator's
/// stencil; with `include_edges` the edge nodes use one-sided differences.
inline PositivityVerdict positivity_check(const Field& phi, bool include_edges = true) {
  const TorusGrid& G = phi.grid;
  PositivityVerdict v;
  auto consider = [&](double e, int i, int j) {
    if (e < v.min_eig.value) v.min_eig = {e, i, j, G.point(i, j)};
  };
  if (G.k == 1) {
    const Derivatives d = derivatives(phi);
    for (int i = 0; i <= G.N; ++i) {
      if (!include_edges && !G.interior(i)) continue;
      consider(1.0 / (G.s(i) * G.s(i)) + d.H[0](i), i, 0);
    }
  } else {
    std::optional<Derivatives> d;
    if (include_edges) d = derivatives(phi);
    for (int i = 0; i <= G.N; ++i) {
      for (int j = 0; j <= G.N; ++j) {
        if (G.interior(i, j)) {
          consider(min_eig2(discrete_H(phi, i, j)), i, j);
        } else if (include_edges) {
          Eigen::Matrix2d H;
          H << 1.0 / (G.s(i) * G.s(i)) + d->H[0](i, j), d->H[1](i, j), d->H[2](i, j),
              1.0 / (G.s(j) * G.s(j)) + d->H[3](i, j);
          consider(min_eig2(H), i, j);
        }
      }
    }
  }
  v.positive = v.min_eig.value > 0.0;
  return v;
}

// ---------------------------------------------------------------------------
// Newton

inline SolutionField newton_solve(const Field& F, const SolverConfig& cfg,
                                  const Field* initial = nullptr) {
  cfg.validate();
  const TorusGrid& G = F.grid;
  SolutionField sol(G);
  sol.epsilon = cfg.epsilon;
  if (initial) sol.phi = *initial;
  // Dirichlet closure
  for (int i = 0; i <= G.N; ++i)
    for (int j = 0; j <= (G.k == 2 ? G.N : 0); ++j)
      if (!G.interior(i, j)) sol.phi(i, j) = 0.0;

  const int N = G.N, m = N - 1;
  auto id = [&](int i, int j) { return G.k == 1 ? i - 1 : (i - 1) * m + (j - 1); };
  Residuals r = reduce_ma_operator(sol.phi, F, cfg.epsilon);
  if (!r.positive) throw StepRejected("newton_solve: initial iterate is not on the positive branch", sol);
  sol.residual_log.push_back(r.sup_normalized);

  auto finish = [&](bool ok) {
    sol.residual = r.raw;
    sol.final_residual = r.sup_normalized;
    sol.min_eig = positivity_check(sol.phi).min_eig;
    sol.converged = ok;
  };

  for (int it = 0; it < cfg.max_iter; ++it) {
    if (r.sup_normalized <= cfg.newton_tol) {
      finish(true);
      return sol;
    }
    const Eigen::SparseMatrix<double> J = ma_jacobian(sol.phi, F, cfg.epsilon);
    const int dim = G.k == 1 ? m : m * m;
    Eigen::VectorXd rhs(dim);
    for (int i = 1; i < N; ++i)
      for (int j = (G.k == 2 ? 1 : 0); j < (G.k == 2 ? N : 1); ++j)
        rhs(id(i, j)) = -r.normalized(i, j);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(J);
    if (lu.info() != Eigen::Success) {
      finish(false);
      throw SolveFailure("newton_solve: singular Jacobian", sol);
    }
    const Eigen::VectorXd step = lu.solve(rhs);

    double t = 1.0;
    bool accepted = false;
    Field trial = sol.phi;
    Residuals rt{Field(G), Field(G), 0.0, true};
    while (t > 1e-8) {
      for (int i = 1; i < N; ++i)
        for (int j = (G.k == 2 ? 1 : 0); j < (G.k == 2 ? N : 1); ++j)
          trial(i, j) = sol.phi(i, j) + t * step(id(i, j));
      rt = reduce_ma_operator(trial, F, cfg.epsilon);
      if (rt.positive && rt.sup_normalized < r.sup_normalized) {
        accepted = true;
        break;
      }
      t *= cfg.damping;
    }
    if (!accepted) {
      finish(false);
      throw StepRejected("newton_solve: line search found no admissible step", sol);
    }
    sol.phi = trial;
    r = rt;
    sol.iterations = it + 1;
    sol.residual_log.push_back(r.sup_normalized);
  }
  if (r.sup_normalized <= cfg.newton_tol) {
    finish(true);
    return sol;
  }
  finish(false);
  throw SolveFailure("newton_solve: max_iter exceeded, residual " + std::to_string(r.sup_normalized), sol);
}

inline SolutionField newton_solve(const ForcingField& f, const SolverConfig& cfg,
                                  const Field* initial = nullptr) {
  return newton_solve(Field::sample(grid_of(cfg, f.F.dim), f.F.value), cfg, initial);
}

// ---------------------------------------------------------------------------
// Forcings

/// F := log(det(diag(s^-2) + D^2 phi*) prod s^2) - eps phi*, analytic for a
/// closed-form phi* with a Hessian.
inline ForcingField manufactured_forcing(const ClosedForm& phi_star, double eps,
                                         const Box& domain, int scan = 201) {
  if (phi_star.dim != 2) throw PreconditionError("manufactured_forcing: k = 2 only");
  for (int i = 0; i < scan; ++i)
    for (int j = 0; j < scan; ++j) {
      const Point s{domain.lo[0] + (domain.hi[0] - domain.lo[0]) * i / (scan - 1),
                    domain.lo[1] + (domain.hi[1] - domain.lo[1]) * j / (scan - 1)};
      Eigen::Matrix2d H = phi_star.hess(s);
      H(0, 0) += 1.0 / (s[0] * s[0]);
      H(1, 1) += 1.0 / (s[1] * s[1]);
      if (!(min_eig2(H) > 0.0))
        throw PreconditionError("manufactured_forcing: diag(s^-2) + D^2 phi* is not positive definite");
    }
  ForcingField out;
  out.name = "manufactured";
  out.F.name = "manufactured(" + phi_star.name + ")";
  out.F.dim = 2;
  out.F.support = phi_star.support;
  out.F.value = [phi_star, eps](const Point& s) {
    Eigen::Matrix2d H = phi_star.hess(s);
    H(0, 0) += 1.0 / (s[0] * s[0]);
    H(1, 1) += 1.0 / (s[1] * s[1]);
    return std::log(H.determinant() * s[0] * s[0] * s[1] * s[1]) - eps * phi_star(s);
  };
  return out;
}

/// Registered manufactured solution: a small bump in the middle of the box.
inline SmoothBump registered_phi_star(double s_min, double s_max) {
  const double c = 0.5 * (s_min + s_max);
  const double r = 0.3 * (s_max - s_min);
  return SmoothBump{{c, c}, {r, r}, 0.005};
}

struct DipoleParams {
  double amplitude = 0.5;
  Point c1{6.5, 6.5}, c2{4.5, 4.5};  // positive lobe, negative lobe
  double radius = 1.5;
};

/// A [beta_1 - gamma beta_2] with gamma chosen so that int (e^F - 1) dV = 0.
inline ForcingField bump_forcing(const DipoleParams& p, int n = 2) {
  const SmoothBump b1{p.c1, {p.radius, p.radius}, 1.0};
  const SmoothBump b2{p.c2, {p.radius, p.radius}, 1.0};
  auto part = [&](const SmoothBump& b, double amp) {
    const Box sup = b.support();
    std::vector<double> extra;
    return integrate_cusp_box(
        n, 2, std::min(sup.lo[0], sup.lo[1]), std::max(sup.hi[0], sup.hi[1]),
        [&](const Point& s) { return std::exp(amp * b.value(s)) - 1.0; }, 32, 12, extra);
  };
  const double pos = part(b1, p.amplitude);
  double lo = 0.0, hi = 1.0;
  while (part(b2, -p.amplitude * hi) + pos > 0.0) {
    hi *= 2.0;
    if (hi > 1e6) throw PreconditionError("bump_forcing: the negative lobe cannot balance the positive one");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (part(b2, -p.amplitude * mid) + pos > 0.0 ? lo : hi) = mid;
  }
  const double gamma = 0.5 * (lo + hi);
  ForcingField f;
  f.name = "bump";
  f.F.name = "bump";
  f.F.dim = 2;
  const double A = p.amplitude;
  f.F.value = [=](const Point& s) { return A * (b1.value(s) - gamma * b2.value(s)); };
  f.F.gradient = [=](const Point& s) -> Eigen::VectorXd {
    return A * (b1.gradient(s) - gamma * b2.gradient(s));
  };
  f.F.hessian = [=](const Point& s) -> Eigen::MatrixXd {
    return A * (b1.hessian(s) - gamma * b2.hessian(s));
  };
  Box sup;
  for (int j = 0; j < 2; ++j) {
    sup.lo.push_back(std::min(p.c1[j], p.c2[j]) - p.radius);
    sup.hi.push_back(std::max(p.c1[j], p.c2[j]) + p.radius);
  }
  f.F.support = sup;
  return f;
}

/// int (e^F - 1) dV over the box, the compatibility defect.
inline double compatibility_defect(const ClosedForm& F, double a, double b, int n = 2) {
  return integrate_cusp_box(
      n, F.dim, a, b, [&](const Point& s) { return std::exp(F(s)) - 1.0; }, 16, 12,
      support_breaks(F));
}

// ---------------------------------------------------------------------------
// Continuation

struct FamilyMember {
  SolutionField sol;
  int cold_iterations = -1;  // iterations of a cold start at the same eps, when measured
};

struct SolutionFamily {
  std::vector<double> schedule;
  std::vector<FamilyMember> members;
  std::vector<double> cauchy;  // ||phi_{eps_m} - phi_{eps_{m+1}}||_inf
  bool complete = false;
  std::string failure;
};

inline SolutionFamily epsilon_continuation(const ForcingField& f, const SolverConfig& base,
                                           const std::vector<double>& schedule,
                                           bool measure_cold = false) {
  for (std::size_t m = 0; m < schedule.size(); ++m) {
    if (!(schedule[m] > 0.0 && schedule[m] <= 1.0))
      throw ConfigError("eps_schedule", "entries must lie in (0, 1]");
    if (m > 0 && !(schedule[m] < schedule[m - 1]))
      throw ConfigError("eps_schedule", "must be strictly decreasing");
  }
  const TorusGrid G = grid_of(base, f.F.dim);
  if (base.require_compatibility) {
    const double defect = compatibility_defect(f.F, G.a, G.b);
    if (std::abs(defect) > 1e-8)
      throw ConfigError("forcing", "int (e^F - 1) dV = " + std::to_string(defect) + " is not 0");
  }
  const Field F = Field::sample(G, f.F.value);
  SolutionFamily fam;
  fam.schedule = schedule;
  for (std::size_t m = 0; m < schedule.size(); ++m) {
    SolverConfig c = base;
    c.epsilon = schedule[m];
    try {
      const Field* warm = m > 0 ? &fam.members.back().sol.phi : nullptr;
      FamilyMember mem{newton_solve(F, c, warm), -1};
      if (measure_cold && m > 0) mem.cold_iterations = newton_solve(F, c).iterations;
      if (m > 0) fam.cauchy.push_back(sup_diff(mem.sol.phi, fam.members.back().sol.phi));
      fam.members.push_back(std::move(mem));
    } catch (const NonConvergenceError& e) {
      fam.failure = e.what();
      return fam;
    }
  }
  fam.complete = true;
  return fam;
}

// ---------------------------------------------------------------------------
// Pullback of the equation to a quasi-coordinate chart

struct ChartResidual {
  double sup = 0.0;
  int samples = 0;
  int skipped = 0;  // samples outside the grid (only with clip)
};

/// Nodal fields needed to evaluate the pulled-back equation off the grid.
struct ChartInterpolant {
  Field phi, F;
  std::vector<Field> H;  // nodal discrete Hessian
  double eps;

  ChartInterpolant(const SolutionField& sol, const Field& Fv)
      : phi(sol.phi), F(Fv), H(derivatives(sol.phi).H), eps(sol.epsilon) {}
};

/// det(gt + ddbar phit) - e^(Ft + eps phit) det(gt) at w = (w1, w2), every
/// pullback taken through quasi_map.
inline double chart_residual_at(const ChartInterpolant& c, double delta1, double delta2, cplx w1,
                                cplx w2) {
  double factor[2], s[2];
  const double dl[2] = {delta1, delta2};
  const cplx w[2] = {w1, w2};
  for (int a = 0; a < 2; ++a) {
    const cplx z = quasi_map(dl[a], w[a]);
    const cplx dz = z * sigma_of(dl[a]) * (-2.0) / ((w[a] - 1.0) * (w[a] - 1.0));
    s[a] = -std::log(std::norm(z));
    factor[a] = std::norm(dz) / std::norm(z);  // |z'|^2 / |z|^2
  }
  const Point p{s[0], s[1]};
  Eigen::Matrix2d H;
  H(0, 0) = 1.0 / (s[0] * s[0]) + interpolate(c.H[0], p);
  H(1, 1) = 1.0 / (s[1] * s[1]) + interpolate(c.H[3], p);
  H(0, 1) = H(1, 0) = interpolate(c.H[1], p);
  const double lhs = factor[0] * factor[1] * H.determinant();
  const double det_g = factor[0] * factor[1] / (s[0] * s[0] * s[1] * s[1]);
  return lhs - std::exp(interpolate(c.F, p) + c.eps * interpolate(c.phi, p)) * det_g;
}

/// Sup of the chart residual over a polar sample of the bidisc of `radius`.
/// Points whose image leaves the grid raise DomainError unless `clip`.
inline ChartResidual quasi_chart_residual(const ChartInterpolant& c, const QuasiChart& chart,
                                          int radial = 8, int angular = 16, bool clip = false) {
  ChartResidual out;
  std::vector<cplx> pts{0.0};
  for (int r = 1; r <= radial; ++r)
    for (int a = 0; a < angular; ++a)
      pts.push_back(std::polar(chart.radius * r / radial * 0.999, 2.0 * std::numbers::pi * a / angular));
  for (cplx w1 : pts)
    for (cplx w2 : pts) {
      try {
        out.sup = std::max(out.sup, std::abs(chart_residual_at(c, chart.delta, chart.delta, w1, w2)));
        ++out.samples;
      } catch (const DomainError&) {
        if (!clip) throw DomainError("quasi_chart_residual: chart image exceeds the grid");
        ++out.skipped;
      }
    }
  return out;
}

/// Chart residual on preimages of interior grid nodes: w on the real axis with
/// s(w) = 2 sigma (1 + x) / (1 - x) at a node, |x| < radius.
inline ChartResidual quasi_chart_residual_nodes(const ChartInterpolant& c, const QuasiChart& chart) {
  const TorusGrid& G = c.phi.grid;
  const double two_sigma = 2.0 * chart.sigma();
  std::vector<double> xs;
  for (int i = 1; i < G.N; ++i) {
    const double x = (G.s(i) - two_sigma) / (G.s(i) + two_sigma);
    if (std::abs(x) < chart.radius) xs.push_back(x);
  }
  ChartResidual out;
  for (double x1 : xs)
    for (double x2 : xs) {
      out.sup = std::max(out.sup, std::abs(chart_residual_at(c, chart.delta, chart.delta, x1, x2)));
      ++out.samples;
    }
  return out;
}

/// Charts for residual studies on a solver box whose inner edge is too close to
/// the core for the covering sequence: sigma = 1.5 * 2^m while the strip
/// [20 sigma / 9, 40 sigma / 9) starts inside the box.
inline std::vector<QuasiChart> solver_charts(double s_max, double radius = 0.75) {
  std::vector<QuasiChart> out;
  for (double sigma = 1.5; 20.0 * sigma / 9.0 < s_max; sigma *= 2.0)
    out.push_back(QuasiChart::make(delta_of(sigma), radius));
  return out;
}

}  // namespace cuspma
