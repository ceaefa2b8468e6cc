#pragma once

// Local cusp model (kappa Delta^*)^k x Delta^(n-k): the weight rho, the model
// and reference Kahler metrics, curvature of the cusp factor and the |grad rho|/rho
// bound.
//
// Conventions used throughout the library:
//   * a cusp factor point is (s, theta) with z = exp(-(s + i theta)/2), so
//     |z|^2 = e^{-s} and s = -log|z|^2;
//   * omega = i g_{j kbar} dz_j ^ dzbar_k and dV has density s^{-2} ds dtheta per
//     cusp factor and the Euclidean area element per disc factor;
//   * |grad h|^2 = g^{j kbar} d_j h d_kbar h, i.e. sum_j s_j^2 (dh/ds_j)^2 for
//     torus-invariant h; Delta h = g^{j kbar} h_{j kbar}.

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cuspma/errors.hpp"
#include "cuspma/quadrature.hpp"

namespace cuspma {

using cplx = std::complex<double>;

inline const double kDefaultKappa = std::exp(-25.0 / 7.0);

struct ModelGeometry {
  int n = 2;
  int k = 2;
  double kappa = kDefaultKappa;
  double s_max = 30.0;

  /// Inner cusp coordinate -log(kappa^2).
  double s_min() const { return -2.0 * std::log(kappa); }
  int disc_factors() const { return n - k; }

  void validate() const {
    if (n < 1) throw ConfigError("n", "complex dimension must be >= 1");
    if (k < 1 || k > n) throw ConfigError("k", "number of cusp factors must satisfy 1 <= k <= n");
    if (!(kappa > 0.0 && kappa < 1.0)) throw ConfigError("kappa", "must lie in (0, 1)");
    if (s_min() < 1.0) throw ConfigError("kappa", "-2 log(kappa) must be >= 1 so that rho >= 1");
    if (!(s_max > s_min())) throw ConfigError("s_max", "must exceed -2 log(kappa)");
  }

  static ModelGeometry make(int n, int k, double kappa, double s_max) {
    ModelGeometry g{n, k, kappa, s_max};
    g.validate();
    return g;
  }
};

struct CuspPoint {
  std::vector<double> s;
  std::vector<double> theta;
  std::vector<cplx> disc;

  static CuspPoint torus_invariant(std::vector<double> s, int disc_factors = 0) {
    CuspPoint p;
    p.theta.assign(s.size(), 0.0);
    p.s = std::move(s);
    p.disc.assign(disc_factors, cplx{0.0, 0.0});
    return p;
  }

  /// Holomorphic coordinate of the j-th cusp factor.
  cplx z(std::size_t j) const { return std::exp(-cplx{s[j], theta[j]} / 2.0); }

  /// All n holomorphic coordinates, cusp factors first.
  std::vector<cplx> coordinates() const {
    std::vector<cplx> out;
    for (std::size_t j = 0; j < s.size(); ++j) out.push_back(z(j));
    out.insert(out.end(), disc.begin(), disc.end());
    return out;
  }
};

inline void check_point(const ModelGeometry& g, const CuspPoint& p) {
  if (static_cast<int>(p.s.size()) != g.k || p.theta.size() != p.s.size() ||
      static_cast<int>(p.disc.size()) != g.n - g.k)
    throw DomainError("cusp point has the wrong number of coordinates");
  for (double s : p.s) {
    if (!(s >= g.s_min() - 1e-12 && s <= g.s_max + 1e-12))
      throw DomainError("cusp coordinate s = " + std::to_string(s) + " outside [s_min, s_max]");
  }
  for (const cplx& d : p.disc)
    if (!(std::abs(d) < 1.0)) throw DomainError("disc coordinate outside the unit disc");
}

// ---------------------------------------------------------------------------
// Weight

struct WeightValue {
  double rho = 1.0;
  std::vector<double> factors;  // rho_j = s_j
  std::vector<double> ds;       // d rho / d s_j
};

inline WeightValue weight_rho(const ModelGeometry& g, const CuspPoint& p) {
  check_point(g, p);
  WeightValue w;
  w.factors = p.s;
  for (double s : p.s) w.rho *= s;
  for (double s : p.s) w.ds.push_back(w.rho / s);
  return w;
}

/// rho on a raw vector of cusp coordinates; no domain check.
inline double rho_of(const std::vector<double>& s) {
  double r = 1.0;
  for (double v : s) r *= v;
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

/// Hermitian coefficient matrix g_{j kbar} at a point.
struct MetricSample {
  Eigen::MatrixXcd coeff;

  Eigen::VectorXd diag() const { return coeff.diagonal().real(); }
  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(coeff, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }
  bool positive_definite() const { return min_eigenvalue() > 0.0; }
};

inline MetricSample model_metric(const ModelGeometry& g, const CuspPoint& p) {
  check_point(g, p);
  MetricSample m;
  m.coeff = Eigen::MatrixXcd::Identity(g.n, g.n);
  for (int j = 0; j < g.k; ++j) {
    const double s = p.s[j];
    m.coeff(j, j) = std::exp(s) / (s * s);  // 1 / (|z|^2 s^2) with |z|^2 = e^{-s}
  }
  return m;
}

/// f(z) = sum_{a,b} conj(z_a) Q_{ab} z_b with Q Hermitian: a smooth real profile
/// with bounded derivatives on the polydisc, standing in for the hermitian-metric
/// factor |sigma_j|^2 = e^f |z_j|^2.
struct QuadraticProfile {
  Eigen::MatrixXcd Q;

  static QuadraticProfile scalar(int n, double c) {
    return {Eigen::MatrixXcd::Identity(n, n) * c};
  }
  static QuadraticProfile zero(int n) { return scalar(n, 0.0); }

  double value(const Eigen::VectorXcd& z) const { return (z.adjoint() * Q * z)(0, 0).real(); }
  /// d f / d z_a.
  Eigen::VectorXcd dz(const Eigen::VectorXcd& z) const { return (Q * z).conjugate(); }
  /// Levi form d_a d_bbar f.
  Eigen::MatrixXcd levi(const Eigen::VectorXcd&) const { return Q.transpose(); }
};

struct ReferenceSample {
  MetricSample metric;
  Eigen::MatrixXcd remainder;  // omega - lambda*flat - cusp model terms
  double remainder_norm = 0.0; // spectral norm of remainder in the model metric
};

struct PositivityFailure {
  std::size_t index = 0;
  std::vector<double> s;
  double min_eigenvalue = 0.0;
};

struct ReferenceField {
  std::vector<ReferenceSample> samples;
  std::optional<PositivityFailure> failure;
  double min_eigenvalue = 0.0;
  bool ok() const { return !failure.has_value(); }
};

namespace detail {
inline Eigen::MatrixXcd model_normalize(const Eigen::MatrixXcd& a, const MetricSample& mdl) {
  Eigen::VectorXd is = mdl.diag().cwiseSqrt().cwiseInverse();
  return is.asDiagonal() * a * is.asDiagonal();
}
}  // namespace detail

/// Coefficients of lambda*omega_0 - i ddbar log rho, omega_0 flat, with
/// rho_j = -log|z_j|^2 - f(z). Expanded in closed form:
///   -ddbar log rho_j = d rho_j (x) dbar rho_j / rho_j^2 + ddbar f / rho_j,
///   d_a rho_j = -delta_{aj} / z_j - d_a f.
template <class Profile>
ReferenceSample reference_metric_at(const ModelGeometry& g, const CuspPoint& p, double lambda,
                                    const Profile& f) {
  check_point(g, p);
  const auto zs = p.coordinates();
  Eigen::VectorXcd z(g.n);
  for (int a = 0; a < g.n; ++a) z(a) = zs[a];
  const double fv = f.value(z);
  const Eigen::VectorXcd df = f.dz(z);
  const Eigen::MatrixXcd L = f.levi(z);

  Eigen::MatrixXcd cusp = Eigen::MatrixXcd::Zero(g.n, g.n);
  Eigen::MatrixXcd model_terms = Eigen::MatrixXcd::Zero(g.n, g.n);
  for (int j = 0; j < g.k; ++j) {
    const double rho_j = p.s[j] - fv;
    if (!(rho_j > 0.0)) throw DomainError("perturbed weight factor is not positive");
    Eigen::VectorXcd drho = -df;
    drho(j) -= 1.0 / z(j);
    cusp += drho * drho.adjoint() / (rho_j * rho_j) + L / rho_j;
    model_terms(j, j) = std::exp(p.s[j]) / (p.s[j] * p.s[j]);
  }
  ReferenceSample out;
  out.metric.coeff = lambda * Eigen::MatrixXcd::Identity(g.n, g.n) + cusp;
  out.remainder = cusp - model_terms;
  const MetricSample mdl = model_metric(g, p);
  out.remainder_norm = detail::model_normalize(out.remainder, mdl).operatorNorm();
  return out;
}

template <class Profile>
ReferenceField reference_metric_local(const ModelGeometry& g, double lambda, const Profile& f,
                                      const std::vector<CuspPoint>& points) {
  ReferenceField field;
  field.min_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    field.samples.push_back(reference_metric_at(g, points[i], lambda, f));
    const double ev = field.samples.back().metric.min_eigenvalue();
    if (ev < field.min_eigenvalue) field.min_eigenvalue = ev;
    if (!(ev > 0.0) && !field.failure)
      field.failure = PositivityFailure{i, points[i].s, ev};
  }
  return field;
}

/// Quasi-isometry constant: smallest C with C^{-1} mdl <= ref <= C mdl.
inline double quasi_isometry_constant(const MetricSample& ref, const MetricSample& mdl) {
  const Eigen::MatrixXcd a = detail::model_normalize(ref.coeff, mdl);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(a, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return std::max(hi, 1.0 / lo);
}

// ---------------------------------------------------------------------------
// Curvature

/// Gauss curvature of the cusp factor metric |dz|^2 / (|z|^2 s^2). In (s, theta)
/// the metric is mu(s) (ds^2 + dtheta^2) with mu = 1/(4 s^2), and
/// K = -(1 / (2 mu)) d^2/ds^2 log mu.
inline double gauss_curvature_cusp(double s) {
  const double mu = 0.25 / (s * s);
  const double dd_log_mu = 2.0 / (s * s);
  return -dd_log_mu / (2.0 * mu);
}

/// Euclidean disc factor.
inline double gauss_curvature_disc() { return 0.0; }

/// Holomorphic sectional curvature -(d dbar log g) / g of the cusp factor.
inline double holomorphic_sectional_curvature_cusp(double s) {
  const double g = std::exp(s) / (s * s);
  const double ddbar_log_g = (2.0 / (s * s)) * std::exp(s);  // (log g)''(s) / |z|^2
  return -ddbar_log_g / g;
}

/// Scalar curvature g^{j jbar} Ric_{j jbar} of the product model.
inline double scalar_curvature_model(const ModelGeometry& g, const CuspPoint& p) {
  double r = 0.0;
  for (int j = 0; j < g.k; ++j) r += holomorphic_sectional_curvature_cusp(p.s[j]);
  return r;
}

// ---------------------------------------------------------------------------
// |grad rho| / rho

struct GradRhoRatio {
  double ratio = 0.0;                  // |grad rho| / rho
  std::vector<double> per_factor;      // |grad rho_j| / rho_j
  double split_sum = 0.0;              // sum of per_factor, an upper bound for ratio
};

/// |grad rho|/rho in the model metric with rho_j = -log|z_j|^2 - f(z).
/// Cusp components are carried as e^{-s_a/2} d log rho so that nothing
/// underflows when |z_a| = e^{-s_a/2} is below the double range.
template <class Profile>
GradRhoRatio grad_rho_ratio(const ModelGeometry& g, const CuspPoint& p, const Profile& f) {
  check_point(g, p);
  const auto zs = p.coordinates();
  Eigen::VectorXcd z(g.n), scale = Eigen::VectorXcd::Ones(g.n);
  for (int a = 0; a < g.n; ++a) z(a) = zs[a];
  // metric inverse on scaled components: s^2 for cusp factors, 1 on discs
  Eigen::VectorXd ginv = Eigen::VectorXd::Ones(g.n);
  for (int j = 0; j < g.k; ++j) {
    ginv(j) = p.s[j] * p.s[j];
    scale(j) = std::exp(-p.s[j] / 2.0);
  }
  const double fv = f.value(z);
  const Eigen::VectorXcd df = f.dz(z);

  GradRhoRatio out;
  Eigen::VectorXcd total = Eigen::VectorXcd::Zero(g.n);  // scaled d log rho
  for (int j = 0; j < g.k; ++j) {
    const double rho_j = p.s[j] - fv;
    Eigen::VectorXcd drho = -(scale.array() * df.array()).matrix();
    drho(j) -= std::exp(cplx{0.0, p.theta[j] / 2.0});  // e^{-s/2} / z_j
    const Eigen::VectorXcd dlog = drho / rho_j;
    total += dlog;
    out.per_factor.push_back(std::sqrt((ginv.array() * dlog.array().abs2()).sum()));
    out.split_sum += out.per_factor.back();
  }
  out.ratio = std::sqrt((ginv.array() * total.array().abs2()).sum());
  return out;
}

inline GradRhoRatio grad_rho_ratio(const ModelGeometry& g, const CuspPoint& p) {
  return grad_rho_ratio(g, p, QuadraticProfile::zero(g.n));
}

// ---------------------------------------------------------------------------
// Volume

/// Density of dV in (s, theta, disc) coordinates.
inline double volume_element(const ModelGeometry& g, const CuspPoint& p) {
  check_point(g, p);
  double d = 1.0;
  for (double s : p.s) d /= s * s;
  return d;
}

/// Volume of the single-factor strip {a <= s <= b} in closed form: 2 pi (1/a - 1/b).
inline double cusp_strip_volume(double a, double b) {
  if (!(b > a)) return 0.0;
  return 2.0 * std::numbers::pi * (1.0 / a - 1.0 / b);
}

/// Integral over {a <= s_j <= b}^k x Delta^(n-k) of a torus-invariant f(s) against
/// dV (any weight goes into f). Tensor Gauss-Legendre on log-spaced panels.
template <class F>
double integrate_torus_invariant(int n, int k, double a, double b, F&& f, int panels = 32,
                                 int order = 8) {
  if (!(b > a)) return 0.0;
  const quad::Rule r = quad::composite_log(a, b, panels, order);
  const double two_pi = 2.0 * std::numbers::pi;
  const double disc = std::pow(std::numbers::pi, n - k);
  double sum = 0.0;
  if (k == 1) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double s = r.x[i];
      sum += r.w[i] * f(std::vector<double>{s}) / (s * s);
    }
    return two_pi * disc * sum;
  }
  if (k == 2) {
    std::vector<double> s(2);
    for (std::size_t i = 0; i < r.size(); ++i) {
      s[0] = r.x[i];
      double row = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) {
        s[1] = r.x[j];
        row += r.w[j] * f(s) / (s[1] * s[1]);
      }
      sum += r.w[i] * row / (s[0] * s[0]);
    }
    return two_pi * two_pi * disc * sum;
  }
  throw PreconditionError("integrate_torus_invariant supports k = 1 or k = 2");
}

// ---------------------------------------------------------------------------
// Measured bounds

/// The three roles of the curvature/weight constant, each measured separately.
struct GeometryBounds {
  double curvature_lower = 0.0;  // B with bisectional curvature >= -B
  double scalar = 0.0;           // sup |R|
  double grad_ratio = 0.0;       // sup |grad rho| / rho
};

inline GeometryBounds measure_bounds(const ModelGeometry& g, int samples = 64) {
  g.validate();
  GeometryBounds b;
  const double a = g.s_min(), c = g.s_max;
  for (int i = 0; i < samples; ++i) {
    const double s = a + (c - a) * i / (samples - 1);
    CuspPoint p = CuspPoint::torus_invariant(std::vector<double>(g.k, s), g.n - g.k);
    b.curvature_lower = std::max(b.curvature_lower, -holomorphic_sectional_curvature_cusp(s));
    b.scalar = std::max(b.scalar, std::abs(scalar_curvature_model(g, p)));
    b.grad_ratio = std::max(b.grad_ratio, grad_rho_ratio(g, p).ratio);
  }
  return b;
}

}  // namespace cuspma
