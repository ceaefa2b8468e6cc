#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "cuspma/errors.hpp"

namespace cuspma::quad {

/// Nodes and weights of a one-dimensional rule.
struct Rule {
  std::vector<double> x;
  std::vector<double> w;

  std::size_t size() const { return x.size(); }

  template <class F>
  double integrate(F&& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sum += w[i] * f(x[i]);
    return sum;
  }
};

/// Gauss-Legendre rule with `n` nodes on [-1, 1], nodes by Newton on P_n.
inline Rule gauss_legendre(int n) {
  if (n < 1) throw PreconditionError("gauss_legendre: n must be >= 1");
  Rule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    if (n == 1) {
      r.x[0] = 0.0;
      r.w[0] = 2.0;
      return r;
    }
    r.x[i] = -z;
    r.x[n - 1 - i] = z;
    r.w[i] = r.w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return r;
}

/// Composite Gauss-Legendre on [a, b] with `panels` equal panels.
inline Rule composite(double a, double b, int panels, int order) {
  Rule base = gauss_legendre(order);
  Rule r;
  if (!(b > a)) return r;
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * h;
    for (std::size_t i = 0; i < base.size(); ++i) {
      r.x.push_back(lo + 0.5 * h * (base.x[i] + 1.0));
      r.w.push_back(0.5 * h * base.w[i]);
    }
  }
  return r;
}

/// Composite Gauss-Legendre on [a, b] (0 < a) with panels equal in log s.
/// Suited to integrands with algebraic decay over long intervals.
inline Rule composite_log(double a, double b, int panels, int order) {
  if (!(a > 0.0)) throw PreconditionError("composite_log: a must be positive");
  Rule u = composite(std::log(a), std::log(b), panels, order);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double s = std::exp(u.x[i]);
    u.x[i] = s;
    u.w[i] *= s;
  }
  return u;
}

/// Uniform periodic trapezoid rule on [0, 2*pi) with `n` nodes.
inline Rule periodic_trapezoid(int n) {
  Rule r;
  for (int i = 0; i < n; ++i) {
    r.x.push_back(2.0 * std::numbers::pi * i / n);
    r.w.push_back(2.0 * std::numbers::pi / n);
  }
  return r;
}

/// Estimate and refinement level from a doubling sequence of quadratures.
struct ConvergedValue {
  double value = 0.0;
  double previous = 0.0;
  int level = 0;
  bool converged = false;
};

/// Repeatedly calls `estimate(level)` with level = 0, 1, 2, ... until two
/// successive values agree to `rel_tol` (relative, with an absolute floor).
template <class Estimate>
ConvergedValue refine_until_stable(Estimate&& estimate, double rel_tol, int max_level,
                                   double abs_floor = 1e-300) {
  ConvergedValue out;
  out.value = estimate(0);
  for (int level = 1; level <= max_level; ++level) {
    out.previous = out.value;
    out.value = estimate(level);
    out.level = level;
    const double scale = std::max(std::abs(out.value), abs_floor);
    if (std::abs(out.value - out.previous) <= rel_tol * scale) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace cuspma::quad
