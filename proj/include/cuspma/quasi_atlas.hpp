#pragma once

// Quasi-coordinate charts on the punctured disc, the doubling covering
// sequence, the two-sided chart-sum decomposition of integrals and empirical
// probes of the weighted Sobolev inequality.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "cuspma/errors.hpp"
#include "cuspma/fields.hpp"
#include "cuspma/functionals.hpp"
#include "cuspma/geometry.hpp"
#include "cuspma/quadrature.hpp"

namespace cuspma {

/// sigma = (1 + delta) / (1 - delta).
inline double sigma_of(double delta) { return (1.0 + delta) / (1.0 - delta); }
inline double delta_of(double sigma) { return (sigma - 1.0) / (sigma + 1.0); }

struct QuasiChart {
  double delta = 0.0;
  double radius = 0.75;  // 3/4 or 1/2

  double sigma() const { return sigma_of(delta); }

  static QuasiChart make(double delta, double radius = 0.75) {
    if (!(delta >= 0.0 && delta < 1.0)) throw DomainError("chart parameter delta must lie in [0, 1)");
    if (!(radius > 0.0 && radius < 1.0)) throw DomainError("chart radius must lie in (0, 1)");
    return {delta, radius};
  }
};

/// pi(psi_delta(w)) = exp(sigma (w + 1) / (w - 1)).
inline cplx quasi_map(double delta, cplx w) {
  if (!(std::abs(w) < 1.0)) throw DomainError("quasi_map: |w| must be < 1");
  return std::exp(sigma_of(delta) * (w + 1.0) / (w - 1.0));
}

/// Pullback of s = -log|z|^2 through quasi_map, in closed form.
inline double pullback_weight(double delta, cplx w) {
  if (!(std::abs(w) < 1.0)) throw DomainError("pullback_weight: |w| must be < 1");
  return 2.0 * sigma_of(delta) * (1.0 - std::norm(w)) / std::norm(1.0 - w);
}

/// Pullback of the cusp coefficient 1/(|z|^2 s^2) through quasi_map by the
/// chain rule: g(z(w)) |z'(w)|^2, z' = z * sigma * (-2) / (w - 1)^2.
inline double pullback_metric(double delta, cplx w) {
  const cplx z = quasi_map(delta, w);
  const double s = pullback_weight(delta, w);
  const cplx dz = z * sigma_of(delta) * (-2.0) / ((w - 1.0) * (w - 1.0));
  return std::norm(dz) / (std::norm(z) * s * s);
}

/// The delta-independent closed form (1 - |w|^2)^{-2}.
inline double pullback_metric_closed(cplx w) {
  const double a = 1.0 - std::norm(w);
  return 1.0 / (a * a);
}

// ---------------------------------------------------------------------------
// Covering sequence

struct Interval {
  double lo = 0.0, hi = 0.0;
  bool overlaps(const Interval& o) const { return lo < o.hi && o.lo < hi; }
  bool contains(double s) const { return s >= lo && s < hi; }
};

struct CoveringSequence {
  double kappa = 0.0;
  double s_max = 0.0;
  std::vector<double> sigma;
  std::vector<double> delta;
  std::vector<double> A;             // 1 - delta (single factor)
  std::vector<Interval> strip;       // [20 sigma / 9, 40 sigma / 9) in s
  std::vector<Interval> strip_wide;  // [2 sigma / 7, 14 sigma) in s, image of the 3/4 disc
  std::vector<Interval> image_half;  // [2 sigma / 3, 6 sigma], image of the 1/2 disc
  std::vector<bool> edge_chart;      // 3/4 image leaves kappa Delta^*
  int ball_neighbors = 0;            // max number of other 3/4 balls a ball meets
  int strip_multiplicity = 0;        // max number of wide strips covering a point
  double tail_start = 0.0;           // s beyond which no strip is kept

  std::size_t size() const { return sigma.size(); }
  double s_min() const { return -2.0 * std::log(kappa); }
  static constexpr int kMultiplicityBound = 16;

  /// True when the union of strips covers [s_min, s_max].
  bool covers() const {
    double reach = s_min();
    for (const auto& iv : strip) {
      if (iv.lo > reach + 1e-12) return false;
      reach = std::max(reach, iv.hi);
    }
    return reach >= s_max;
  }
};

inline CoveringSequence covering_sequence(double kappa, double s_max) {
  if (!(kappa > 0.0 && kappa < 1.0)) throw ConfigError("kappa", "must lie in (0, 1)");
  const double s_min = -2.0 * std::log(kappa);
  if (!(s_max > s_min)) throw ConfigError("s_max", "must exceed -2 log(kappa)");
  CoveringSequence seq;
  seq.kappa = kappa;
  seq.s_max = s_max;
  double sigma = -0.6 * std::log(kappa);
  if (!(sigma > 1.0))
    throw ConfigError("kappa", "first chart needs sigma_1 = -(3/5) log(kappa) > 1");
  // Stop at the first strip lying entirely beyond s_max.
  while (20.0 * sigma / 9.0 < s_max) {
    seq.sigma.push_back(sigma);
    seq.delta.push_back(delta_of(sigma));
    seq.A.push_back(1.0 - seq.delta.back());
    seq.strip.push_back({20.0 * sigma / 9.0, 40.0 * sigma / 9.0});
    seq.strip_wide.push_back({2.0 * sigma / 7.0, 14.0 * sigma});
    seq.image_half.push_back({2.0 * sigma / 3.0, 6.0 * sigma});
    seq.edge_chart.push_back(2.0 * sigma / 7.0 < s_min);
    sigma *= 2.0;
  }
  seq.tail_start = seq.strip.empty() ? s_min : seq.strip.back().hi;

  // Balls in the log z plane: centre -25 sigma / 7, radius 24 sigma / 7.
  for (std::size_t a = 0; a < seq.size(); ++a) {
    int count = 0;
    for (std::size_t b = 0; b < seq.size(); ++b) {
      if (a == b) continue;
      const double dist = 25.0 / 7.0 * std::abs(seq.sigma[a] - seq.sigma[b]);
      if (dist <= 24.0 / 7.0 * (seq.sigma[a] + seq.sigma[b])) ++count;
    }
    seq.ball_neighbors = std::max(seq.ball_neighbors, count);
  }
  // Pointwise multiplicity, checked at every strip endpoint and midpoint.
  std::vector<double> probes;
  for (const auto& iv : seq.strip_wide) {
    probes.push_back(iv.lo);
    probes.push_back(0.5 * (iv.lo + iv.hi));
  }
  for (double s : probes) {
    int c = 0;
    for (const auto& iv : seq.strip_wide) c += iv.contains(s);
    seq.strip_multiplicity = std::max(seq.strip_multiplicity, c);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Chart-sum integrals

/// Nodes (s(w), dA(w)) of a polar rule on the disc |w| < radius for the chart
/// with parameter delta. The radial direction is split where s(w) crosses
/// [s_lo, s_hi] so the zero extension of the integrand is integrated exactly at
/// its jumps.
struct ChartNodes {
  std::vector<double> s;
  std::vector<double> w;
};

inline ChartNodes chart_nodes(double delta, double radius, double s_lo, double s_hi, int level) {
  const int n_angle = 32 << level;
  const int order = 8 << std::min(level, 3);
  const quad::Rule g = quad::gauss_legendre(order);
  const double sigma = sigma_of(delta);
  ChartNodes out;
  for (int ia = 0; ia < n_angle; ++ia) {
    const double alpha = 2.0 * std::numbers::pi * (ia + 0.5) / n_angle;
    const double ca = std::cos(alpha);
    // s(r) = s0  <=>  (2 sigma + s0) r^2 - 2 s0 cos(alpha) r + (s0 - 2 sigma) = 0
    std::vector<double> cuts{0.0, radius};
    for (double s0 : {s_lo, s_hi}) {
      const double a = 2.0 * sigma + s0, b = -2.0 * s0 * ca, c = s0 - 2.0 * sigma;
      const double disc = b * b - 4.0 * a * c;
      if (disc < 0.0) continue;
      for (double sign : {-1.0, 1.0}) {
        const double r = (-b + sign * std::sqrt(disc)) / (2.0 * a);
        if (r > 0.0 && r < radius) cuts.push_back(r);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double lo = cuts[c], hi = cuts[c + 1];
      if (hi - lo < 1e-15) continue;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = lo + 0.5 * (hi - lo) * (g.x[i] + 1.0);
        const double wr = 0.5 * (hi - lo) * g.w[i] * r * (2.0 * std::numbers::pi / n_angle);
        const cplx w = std::polar(r, alpha);
        out.s.push_back(pullback_weight(delta, w));
        out.w.push_back(wr);
      }
    }
  }
  return out;
}

/// Density of the push-forward of Lebesgue measure on |w| < radius under
/// w -> s(w). The level set {s(w) = s} is the horocycle |w - c| = R with
/// c = s / (s + 2 sigma), R = 2 sigma / (s + 2 sigma); parameterizing the
/// family by (s, beta), w = c + R e^{i beta}, the area element is
/// 2 sigma R (1 - cos beta) / (s + 2 sigma)^2 ds dbeta, and the arc inside the
/// disc is cos beta < (radius^2 - c^2 - R^2) / (2 c R).
inline double chart_density(double sigma, double radius, double s) {
  const double d = s + 2.0 * sigma;
  const double c = s / d, R = 2.0 * sigma / d;
  const double gamma = (radius * radius - c * c - R * R) / (2.0 * c * R);
  if (gamma <= -1.0) return 0.0;
  const double b0 = gamma >= 1.0 ? 0.0 : std::acos(gamma);
  return 2.0 * sigma * R / (d * d) * 2.0 * (std::numbers::pi - b0 + std::sin(b0));
}

/// Range of s over the disc |w| < radius.
inline Interval chart_image(double sigma, double radius) {
  return {2.0 * sigma * (1.0 - radius) / (1.0 + radius), 2.0 * sigma * (1.0 + radius) / (1.0 - radius)};
}

/// The push-forward of the chart's area measure restricted to s in
/// [s_lo, s_hi], as a 1-D rule. The density vanishes like a square root at the
/// ends of the image, so the rule uses s = lo + (hi - lo)(1 - cos t) / 2 over
/// the image, which makes the integrand smooth in t.
inline quad::Rule chart_rule(double delta, double radius, double s_lo, double s_hi, int level,
                             int order = 10) {
  const double sigma = sigma_of(delta);
  const Interval img = chart_image(sigma, radius);
  quad::Rule out;
  const double a = std::max(s_lo, img.lo), b = std::min(s_hi, img.hi);
  if (!(b > a)) return out;
  auto t_of = [&](double s) {
    return std::acos(std::clamp(1.0 - 2.0 * (s - img.lo) / (img.hi - img.lo), -1.0, 1.0));
  };
  const double ta = t_of(a), tb = t_of(b);
  const int panels = 8 << level;
  const quad::Rule r = quad::composite(ta, tb, panels, order);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double t = r.x[i];
    const double s = img.lo + 0.5 * (img.hi - img.lo) * (1.0 - std::cos(t));
    const double ds = 0.5 * (img.hi - img.lo) * std::sin(t);
    out.x.push_back(s);
    out.w.push_back(r.w[i] * ds * chart_density(sigma, radius, s));
  }
  return out;
}

/// The same push-forward from a polar rule on the disc (Gauss-Legendre in the
/// radius, trapezoid in the angle), with the radial direction split where s(w)
/// crosses s_lo and s_hi. Converges slowly; kept as an independent check.
inline quad::Rule chart_rule_polar(double delta, double radius, double s_lo, double s_hi, int level) {
  const ChartNodes nodes = chart_nodes(delta, radius, s_lo, s_hi, level);
  quad::Rule out;
  for (std::size_t m = 0; m < nodes.s.size(); ++m)
    if (nodes.s[m] >= s_lo && nodes.s[m] <= s_hi) {
      out.x.push_back(nodes.s[m]);
      out.w.push_back(nodes.w[m]);
    }
  return out;
}

struct ChartSumResult {
  double chart_sum = 0.0;    // sum_l A_l int |Phi_l^* f| dV_0
  double plain_sum = 0.0;    // the same with the A-factors dropped
  std::vector<double> per_chart;  // A-weighted contribution of each (multi-)index
  double tail_residual = 0.0;     // int over s > s_max of |f| dV (k = 1), from the untruncated f
  int level = 0;
};

/// Sum over the covering sequence (tensor over the k cusp factors) of the
/// A-weighted Euclidean integrals of |f o Phi| over the polydisc of `radius`.
/// f is extended by zero outside [s_min, s_max]^k.
inline ChartSumResult chart_sum_integral(const ClosedForm& f, const CoveringSequence& seq, int n,
                                         int k, double radius, int level = 0) {
  if (k < 1 || k > 2) throw PreconditionError("chart_sum_integral supports k = 1 or 2");
  const double s_lo = seq.s_min(), s_hi = seq.s_max;
  std::vector<quad::Rule> rules;
  for (std::size_t l = 0; l < seq.size(); ++l)
    rules.push_back(chart_rule(seq.delta[l], radius, s_lo, s_hi, level));
  const double disc = std::pow(std::numbers::pi, n - k);

  ChartSumResult out;
  out.level = level;
  if (k == 1) {
    for (std::size_t l = 0; l < seq.size(); ++l) {
      const double sum = rules[l].integrate([&](double s) { return std::abs(f(Point{s})); });
      out.per_chart.push_back(seq.A[l] * sum * disc);
      out.chart_sum += seq.A[l] * sum * disc;
      out.plain_sum += sum * disc;
    }
    out.tail_residual = integrate_torus_invariant(
        n, 1, s_hi, 64.0 * s_hi, [&](const Point& p) { return std::abs(f(p)); }, 64, 8);
    return out;
  }
  Point s(2);
  for (std::size_t l1 = 0; l1 < seq.size(); ++l1) {
    for (std::size_t l2 = 0; l2 < seq.size(); ++l2) {
      double sum = 0.0;
      for (std::size_t i = 0; i < rules[l1].size(); ++i) {
        s[0] = rules[l1].x[i];
        double row = 0.0;
        for (std::size_t j = 0; j < rules[l2].size(); ++j) {
          s[1] = rules[l2].x[j];
          row += rules[l2].w[j] * std::abs(f(s));
        }
        sum += rules[l1].w[i] * row;
      }
      const double A = seq.A[l1] * seq.A[l2];
      out.per_chart.push_back(A * sum * disc);
      out.chart_sum += A * sum * disc;
      out.plain_sum += sum * disc;
    }
  }
  return out;
}

/// int over [s_min, s_max]^k x Delta^(n-k) of |f| * rho^weight dV.
inline double direct_integral(const ClosedForm& f, double s_min, double s_max, int n, int k,
                              double rho_weight = 0.0, int level = 0) {
  return integrate_torus_invariant(
      n, k, s_min, s_max,
      [&](const Point& s) { return std::abs(f(s)) * std::pow(rho_of(s), rho_weight); },
      32 << level, 8);
}

/// One row of the covering-decomposition probe.
struct BracketRow {
  std::string integrand;
  double direct = 0.0;
  double sum_three_quarter = 0.0;
  double sum_half = 0.0;
  double lower_ratio = 0.0;   // sum_three_quarter / direct, must be <= c
  double upper_ratio = 0.0;   // direct / sum_half, must be <= c
  double swapped_lower = 0.0; // sum_half / direct (other radius orientation)
  double swapped_upper = 0.0; // direct / sum_three_quarter
  double weighted_direct = 0.0;     // int |f| rho dV
  double weighted_plain_half = 0.0; // plain (A-free) sum on the 1/2 disc
  double weighted_plain_tq = 0.0;   // plain sum on the 3/4 disc
  int level = 0;
  bool converged = false;

  double c() const { return std::max(lower_ratio, upper_ratio); }
};

inline BracketRow bracket_probe(const ClosedForm& f, const CoveringSequence& seq, int n, int k,
                                int level) {
  BracketRow row;
  row.integrand = f.name;
  row.level = level;
  row.direct = direct_integral(f, seq.s_min(), seq.s_max, n, k, 0.0, level);
  const ChartSumResult tq = chart_sum_integral(f, seq, n, k, 0.75, level);
  const ChartSumResult half = chart_sum_integral(f, seq, n, k, 0.5, level);
  row.sum_three_quarter = tq.chart_sum;
  row.sum_half = half.chart_sum;
  row.lower_ratio = tq.chart_sum / row.direct;
  row.upper_ratio = row.direct / half.chart_sum;
  row.swapped_lower = half.chart_sum / row.direct;
  row.swapped_upper = row.direct / tq.chart_sum;
  row.weighted_direct = direct_integral(f, seq.s_min(), seq.s_max, n, k, 1.0, level);
  row.weighted_plain_half = half.plain_sum;
  row.weighted_plain_tq = tq.plain_sum;
  return row;
}

/// Bracket probe refined until both chart sums and the direct integral change
/// by less than `rel_tol` between levels.
inline BracketRow bracket_probe_converged(const ClosedForm& f, const CoveringSequence& seq, int n,
                                          int k, double rel_tol = 1e-3, int max_level = 3) {
  BracketRow prev = bracket_probe(f, seq, n, k, 0);
  for (int level = 1; level <= max_level; ++level) {
    BracketRow cur = bracket_probe(f, seq, n, k, level);
    auto close = [&](double a, double b) { return std::abs(a - b) <= rel_tol * std::abs(a); };
    if (close(cur.direct, prev.direct) && close(cur.sum_half, prev.sum_half) &&
        close(cur.sum_three_quarter, prev.sum_three_quarter)) {
      cur.converged = true;
      return cur;
    }
    prev = cur;
  }
  return prev;
}

// ---------------------------------------------------------------------------
// Weighted Sobolev probe

inline bool sobolev_admissible(double p, double q, int n) {
  return q >= p && p >= 1.0 && 1.0 / p <= 1.0 / (2.0 * n) + 1.0 / q + 1e-15;
}

struct SobolevValue {
  double lhs = 0.0;    // (int |v|^q rho dV)^{1/q}
  double rhs = 0.0;    // (int (|v|^p + |grad v|^p) rho dV)^{1/p}
  double ratio = 0.0;
  int level = 0;
};

/// Ratio of the two sides of the weighted Sobolev inequality for a closed-form
/// torus-invariant v on the box [s_min, s_max]^k. Quadrature panels are
/// restricted to the support of v when it is known.
inline SobolevValue sobolev_ratio(const ClosedForm& v, const ModelGeometry& g, double p, double q,
                                  int level = 0) {
  if (!sobolev_admissible(p, q, g.n))
    throw PreconditionError("sobolev_ratio: exponents violate q >= p and 1/p <= 1/(2n) + 1/q");
  double a = g.s_min(), b = g.s_max;
  if (v.support) {
    a = std::max(a, *std::min_element(v.support->lo.begin(), v.support->lo.end()));
    b = std::min(b, *std::max_element(v.support->hi.begin(), v.support->hi.end()));
  }
  const int panels = 16 << level;
  const double lq = integrate_torus_invariant(
      g.n, g.k, a, b, [&](const Point& s) { return std::pow(std::abs(v(s)), q) * rho_of(s); },
      panels, 8);
  const double rp = integrate_torus_invariant(
      g.n, g.k, a, b,
      [&](const Point& s) {
        return (std::pow(std::abs(v(s)), p) + std::pow(v.grad_norm(s), p)) * rho_of(s);
      },
      panels, 8);
  if (!(rp > 0.0)) throw PreconditionError("sobolev_ratio: v vanishes identically");
  SobolevValue out;
  out.lhs = std::pow(lq, 1.0 / q);
  out.rhs = std::pow(rp, 1.0 / p);
  out.ratio = out.lhs / out.rhs;
  out.level = level;
  return out;
}

/// Multiplies a closed-form field by a constant.
inline ClosedForm scaled(const ClosedForm& f, double c) {
  ClosedForm out = f;
  out.name = f.name + "*" + std::to_string(c);
  out.value = [f, c](const Point& s) { return c * f.value(s); };
  out.gradient = [f, c](const Point& s) -> Eigen::VectorXd { return c * f.grad(s); };
  out.hessian = nullptr;
  return out;
}

/// The 20-member bump family for the Sobolev probe: bumps centred in the box
/// with radii spread geometrically from 0.25 to the half-width of the box.
inline std::vector<ClosedForm> sobolev_family(const ModelGeometry& g, int members = 20) {
  std::vector<ClosedForm> out;
  const double a = g.s_min(), b = g.s_max;
  const double half = 0.5 * (b - a);
  const double c = 0.5 * (a + b);
  for (int i = 0; i < members; ++i) {
    const double r = 0.25 * std::pow(half / 0.25 * 0.999, static_cast<double>(i) / (members - 1));
    // alternate centres: box middle, and shifted toward the cusp end
    const double centre = (i % 2 == 0) ? c : std::min(b - r, c + 0.5 * (half - r));
    SmoothBump bump{Point(g.k, centre), Point(g.k, r), 1.0};
    out.push_back(bump.field("bump" + std::to_string(i)));
    out.back().support = bump.support();
  }
  return out;
}


// ---------------------------------------------------------------------------
// Sup-norm probe

struct SupBoundRow {
  std::string name;
  double sup = 0.0;       // sup |F| on a fine sample
  double I = 0.0;         // I(F, p0)
  bool I_divergent = false;
  double ratio = 0.0;     // sup / I^(1/p0), 0 when F = 0
  std::vector<double> q;
  std::vector<double> ladder;  // normalized L^q(rho dV) norms over `box`
};

/// sup|F| against I(F, p0)^(1/p0), plus the normalized L^q(rho dV) ladder on
/// [a, b]^k whose q -> infinity limit is sup|F| on that box.
inline SupBoundRow sup_bound_probe(const ClosedForm& F, int n, int k, double p0, double s_min,
                                   double s_max, double a, double b,
                                   const std::vector<double>& q_schedule = {8, 16, 32, 64, 128, 256, 512}) {
  if (!(p0 > 2.0 * n)) throw PreconditionError("sup_bound_probe: requires p0 > 2n");
  SupBoundRow row;
  row.name = F.name;
  const IValue I = I_functional(F, n, k, p0, s_min, s_max);
  row.I = I.value;
  row.I_divergent = I.divergent;
  const int m = 401;
  Point s(k);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < (k == 2 ? m : 1); ++j) {
      s[0] = a + (b - a) * i / (m - 1);
      if (k == 2) s[1] = a + (b - a) * j / (m - 1);
      row.sup = std::max(row.sup, std::abs(F(s)));
    }
  }
  row.ratio = row.sup == 0.0 ? 0.0 : row.sup / std::pow(row.I, 1.0 / p0);
  const auto extra = support_breaks(F);
  const double mass = integrate_cusp_box(n, k, a, b, [](const Point& x) { return rho_of(x); }, 32, 12, extra);
  for (double q : q_schedule) {
    const double v = integrate_cusp_box(
        n, k, a, b, [&](const Point& x) { return std::pow(std::abs(F(x)), q) * rho_of(x); }, 32, 12,
        extra);
    row.q.push_back(q);
    row.ladder.push_back(std::pow(v / mass, 1.0 / q));
  }
  return row;
}

}  // namespace cuspma
