#pragma once

// Quadrature of torus-invariant integrands over [s_min, s_max]^k with
// breakpoints that do not move when s_max grows, and the weighted functional
// I(F, p0) built on it.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "cuspma/errors.hpp"
#include "cuspma/fields.hpp"
#include "cuspma/quadrature.hpp"

namespace cuspma {

/// Breakpoints a * 2^(j / per_octave) up to b, plus any extra points in (a, b).
inline std::vector<double> geometric_breaks(double a, double b, int per_octave,
                                            const std::vector<double>& extra = {}) {
  std::vector<double> out{a};
  const double ratio = std::pow(2.0, 1.0 / per_octave);
  for (double s = a * ratio; s < b; s *= ratio) out.push_back(s);
  for (double e : extra)
    if (e > a && e < b) out.push_back(e);
  out.push_back(b);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(),
                        [](double x, double y) { return std::abs(x - y) < 1e-13 * std::abs(x); }),
            out.end());
  return out;
}

inline quad::Rule rule_on_breaks(const std::vector<double>& breaks, int order) {
  const quad::Rule g = quad::gauss_legendre(order);
  quad::Rule r;
  for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
    const double lo = breaks[p], h = breaks[p + 1] - breaks[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      r.x.push_back(lo + 0.5 * h * (g.x[i] + 1.0));
      r.w.push_back(0.5 * h * g.w[i]);
    }
  }
  return r;
}

/// int over [a, b]^k x Delta^(n-k) of f dV, dV = prod s_j^-2 ds_j dtheta_j x Lebesgue.
template <class F>
double integrate_cusp_box(int n, int k, double a, double b, F&& f, int per_octave = 8,
                          int order = 12, const std::vector<double>& extra = {}) {
  if (!(b > a)) return 0.0;
  if (k < 1 || k > 2) throw PreconditionError("integrate_cusp_box supports k = 1 or 2");
  const quad::Rule r = rule_on_breaks(geometric_breaks(a, b, per_octave, extra), order);
  const double scale = std::pow(2.0 * std::numbers::pi, k) * std::pow(std::numbers::pi, n - k);
  double sum = 0.0;
  if (k == 1) {
    Point s(1);
    for (std::size_t i = 0; i < r.size(); ++i) {
      s[0] = r.x[i];
      sum += r.w[i] * f(s) / (s[0] * s[0]);
    }
  } else {
    Point s(2);
    for (std::size_t i = 0; i < r.size(); ++i) {
      s[0] = r.x[i];
      double row = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) {
        s[1] = r.x[j];
        row += r.w[j] * f(s) / (s[1] * s[1]);
      }
      sum += r.w[i] * row / (s[0] * s[0]);
    }
  }
  return scale * sum;
}

inline std::vector<double> support_breaks(const ClosedForm& f) {
  std::vector<double> out;
  if (f.support) {
    for (double v : f.support->lo) out.push_back(v);
    for (double v : f.support->hi) out.push_back(v);
  }
  return out;
}

struct IValue {
  double value = 0.0;
  double doubled = 0.0;     // the same quadrature with s_max doubled
  double rel_change = 0.0;  // |doubled - value| / value
  bool divergent = false;   // the doubling audit failed
};

/// Integrand of I(F, p0) at s: (|F|^p0 + |grad F|^p0) rho^((p0 - 2) / (2n - 2)).
inline double I_density(const ClosedForm& F, const Point& s, int n, double p0) {
  const double f = std::abs(F(s));
  const double g = F.grad_norm(s);
  if (f == 0.0 && g == 0.0) return 0.0;
  double rho = 1.0;
  for (double v : s) rho *= v;
  return (std::pow(f, p0) + std::pow(g, p0)) * std::pow(rho, (p0 - 2.0) / (2.0 * n - 2.0));
}

/// I(F, p0) on [s_min, s_max]^k with a doubling audit of the cusp tail.
inline IValue I_functional(const ClosedForm& F, int n, int k, double p0, double s_min,
                           double s_max, double audit_tol = 1e-6) {
  if (n < 2) throw PreconditionError("I_functional: the weight exponent is undefined at n = 1");
  if (!(p0 > 2.0 * n)) throw PreconditionError("I_functional: requires p0 > 2n");
  const auto extra = support_breaks(F);
  auto dens = [&](const Point& s) { return I_density(F, s, n, p0); };
  IValue out;
  out.value = integrate_cusp_box(n, k, s_min, s_max, dens, 8, 12, extra);
  auto extra2 = extra;
  extra2.push_back(s_max);  // keeps the inner panels identical, so the change is the tail
  out.doubled = integrate_cusp_box(n, k, s_min, 2.0 * s_max, dens, 8, 12, extra2);
  const double scale = std::max(std::abs(out.value), 1e-300);
  out.rel_change = (out.value == 0.0 && out.doubled == 0.0) ? 0.0 : std::abs(out.doubled - out.value) / scale;
  out.divergent = out.rel_change > audit_tol;
  return out;
}

}  // namespace cuspma
