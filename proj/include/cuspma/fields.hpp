#pragma once

// Closed-form torus-invariant fields h(s_1, ..., s_k) and the versioned
// registry of test integrands used by the covering and Sobolev probes.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cuspma/errors.hpp"

namespace cuspma {

using Point = std::vector<double>;

/// Axis-aligned box in cusp coordinates.
struct Box {
  Point lo, hi;
  bool contains(const Point& s) const {
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] < lo[j] || s[j] > hi[j]) return false;
    return true;
  }
};

/// A torus-invariant field with closed-form value and, when available, first
/// and second derivatives in s. Missing derivatives fall back to central
/// differences of `value`.
struct ClosedForm {
  std::string name;
  int dim = 2;
  std::function<double(const Point&)> value;
  std::function<Eigen::VectorXd(const Point&)> gradient;
  std::function<Eigen::MatrixXd(const Point&)> hessian;
  std::optional<Box> support;  // vanishes outside, when set

  double operator()(const Point& s) const { return value(s); }

  Eigen::VectorXd grad(const Point& s) const {
    if (gradient) return gradient(s);
    Eigen::VectorXd g(dim);
    for (int j = 0; j < dim; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(s[j]));
      Point a = s, b = s;
      a[j] += h;
      b[j] -= h;
      g(j) = (value(a) - value(b)) / (2.0 * h);
    }
    return g;
  }

  Eigen::MatrixXd hess(const Point& s) const {
    if (hessian) return hessian(s);
    Eigen::MatrixXd H(dim, dim);
    for (int j = 0; j < dim; ++j) {
      const double h = 1e-4 * std::max(1.0, std::abs(s[j]));
      Point a = s, b = s;
      a[j] += h;
      b[j] -= h;
      H.col(j) = (grad(a) - grad(b)) / (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
  }

  /// |grad h|_g = sqrt(sum_j s_j^2 (dh/ds_j)^2).
  double grad_norm(const Point& s) const {
    const Eigen::VectorXd g = grad(s);
    double sum = 0.0;
    for (int j = 0; j < dim; ++j) sum += s[j] * s[j] * g(j) * g(j);
    return std::sqrt(sum);
  }
};

// ---------------------------------------------------------------------------
// Smooth compactly supported bump A * beta(t), t = sum_j ((s_j - c_j) / r_j)^2,
// beta(t) = exp(1 - 1 / (1 - t)) on t < 1. beta(0) = 1.

struct SmoothBump {
  Point center;
  Point radius;
  double amplitude = 1.0;

  int dim() const { return static_cast<int>(center.size()); }

  double t_of(const Point& s) const {
    double t = 0.0;
    for (int j = 0; j < dim(); ++j) {
      const double x = (s[j] - center[j]) / radius[j];
      t += x * x;
    }
    return t;
  }
  static double beta(double t) { return t < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - t)) : 0.0; }
  static double beta1(double t) {
    if (t >= 1.0) return 0.0;
    const double u = 1.0 - t;
    return -beta(t) / (u * u);
  }
  static double beta2(double t) {
    if (t >= 1.0) return 0.0;
    const double u = 1.0 - t;
    return beta(t) * (1.0 / (u * u * u * u) - 2.0 / (u * u * u));
  }

  double value(const Point& s) const { return amplitude * beta(t_of(s)); }

  Eigen::VectorXd gradient(const Point& s) const {
    const double b1 = beta1(t_of(s));
    Eigen::VectorXd g(dim());
    for (int j = 0; j < dim(); ++j)
      g(j) = amplitude * b1 * 2.0 * (s[j] - center[j]) / (radius[j] * radius[j]);
    return g;
  }

  Eigen::MatrixXd hessian(const Point& s) const {
    const double t = t_of(s);
    const double b1 = beta1(t), b2 = beta2(t);
    Eigen::MatrixXd H(dim(), dim());
    for (int i = 0; i < dim(); ++i) {
      const double xi = 2.0 * (s[i] - center[i]) / (radius[i] * radius[i]);
      for (int j = 0; j < dim(); ++j) {
        const double xj = 2.0 * (s[j] - center[j]) / (radius[j] * radius[j]);
        H(i, j) = amplitude * (b2 * xi * xj + (i == j ? 2.0 * b1 / (radius[i] * radius[i]) : 0.0));
      }
    }
    return H;
  }

  Box support() const {
    Box b;
    for (int j = 0; j < dim(); ++j) {
      b.lo.push_back(center[j] - radius[j]);
      b.hi.push_back(center[j] + radius[j]);
    }
    return b;
  }

  ClosedForm field(std::string name = "bump") const {
    ClosedForm f;
    f.name = std::move(name);
    f.dim = dim();
    const SmoothBump self = *this;
    f.value = [self](const Point& s) { return self.value(s); };
    f.gradient = [self](const Point& s) { return self.gradient(s); };
    f.hessian = [self](const Point& s) { return self.hessian(s); };
    f.support = support();
    return f;
  }
};

/// A * rho^a, rho = prod s_j.
inline ClosedForm rho_power(int dim, double a, double amplitude = 1.0, std::string name = {}) {
  ClosedForm f;
  f.name = name.empty() ? "rho^" + std::to_string(a) : std::move(name);
  f.dim = dim;
  f.value = [=](const Point& s) {
    double r = 1.0;
    for (double v : s) r *= v;
    return amplitude * std::pow(r, a);
  };
  f.gradient = [=](const Point& s) {
    double r = 1.0;
    for (double v : s) r *= v;
    Eigen::VectorXd g(dim);
    for (int j = 0; j < dim; ++j) g(j) = amplitude * a * std::pow(r, a) / s[j];
    return g;
  };
  return f;
}

/// Gaussian exp(-|s - c|^2 / (2 w^2)).
inline ClosedForm gaussian(const Point& center, double width, double amplitude = 1.0) {
  ClosedForm f;
  f.name = "gauss(w=" + std::to_string(width) + ")";
  f.dim = static_cast<int>(center.size());
  f.value = [=](const Point& s) {
    double r2 = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) r2 += (s[j] - center[j]) * (s[j] - center[j]);
    return amplitude * std::exp(-r2 / (2.0 * width * width));
  };
  f.gradient = [=](const Point& s) {
    double r2 = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) r2 += (s[j] - center[j]) * (s[j] - center[j]);
    const double e = amplitude * std::exp(-r2 / (2.0 * width * width));
    Eigen::VectorXd g(center.size());
    for (std::size_t j = 0; j < s.size(); ++j) g(j) = -e * (s[j] - center[j]) / (width * width);
    return g;
  };
  return f;
}

inline ClosedForm product(const ClosedForm& a, const ClosedForm& b) {
  ClosedForm f;
  f.name = a.name + "*" + b.name;
  f.dim = a.dim;
  f.value = [=](const Point& s) { return a.value(s) * b.value(s); };
  f.gradient = [=](const Point& s) -> Eigen::VectorXd {
    return a.grad(s) * b.value(s) + b.grad(s) * a.value(s);
  };
  return f;
}

inline ClosedForm zero_field(int dim) {
  ClosedForm f;
  f.name = "zero";
  f.dim = dim;
  f.value = [](const Point&) { return 0.0; };
  f.gradient = [dim](const Point&) { return Eigen::VectorXd::Zero(dim).eval(); };
  f.hessian = [dim](const Point&) { return Eigen::MatrixXd::Zero(dim, dim).eval(); };
  return f;
}

inline ClosedForm constant_field(int dim, double c) {
  ClosedForm f = zero_field(dim);
  f.name = "const";
  f.value = [c](const Point&) { return c; };
  return f;
}

// ---------------------------------------------------------------------------
// Registry of test integrands for the covering decomposition. Bumping the
// version string invalidates stored constants.

inline constexpr const char* kIntegrandRegistryVersion = "v1";

/// Integrands for a cusp domain starting at s_min (dimension `dim`).
inline std::vector<ClosedForm> integrand_registry(int dim, double s_min) {
  std::vector<ClosedForm> out;
  out.push_back(constant_field(dim, 1.0));
  out.back().name = "one";
  for (double a : {-2.0, -1.0, -0.5, 0.5}) out.push_back(rho_power(dim, a));
  for (double c : {1.5, 3.0, 6.0}) {
    ClosedForm g = gaussian(Point(dim, c * s_min), 0.4 * c * s_min);
    g.name = "gauss@" + std::to_string(c);
    out.push_back(g);
  }
  ClosedForm pg = product(rho_power(dim, -1.0), gaussian(Point(dim, 2.0 * s_min), s_min));
  pg.name = "rho^-1*gauss";
  out.push_back(pg);
  return out;
}

}  // namespace cuspma
