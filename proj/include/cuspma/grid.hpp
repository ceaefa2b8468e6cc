#pragma once

// Uniform tensor grids on [s_min, s_max]^k (k = 1 or 2), sampled scalar fields,
// centred finite differences and local bicubic interpolation.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "cuspma/errors.hpp"
#include "cuspma/fields.hpp"

namespace cuspma {

struct TorusGrid {
  int k = 2;
  double a = 2.0;   // s_min
  double b = 12.0;  // s_max
  int N = 32;       // intervals per axis

  int nodes() const { return N + 1; }
  double h() const { return (b - a) / N; }
  double s(int i) const { return i == N ? b : a + i * h(); }
  std::size_t size() const { return k == 2 ? std::size_t(nodes()) * nodes() : std::size_t(nodes()); }
  std::size_t index(int i, int j = 0) const { return k == 2 ? std::size_t(i) * nodes() + j : i; }
  bool interior(int i, int j = 1) const {
    return i > 0 && i < N && (k == 1 || (j > 0 && j < N));
  }
  Point point(int i, int j = 0) const { return k == 2 ? Point{s(i), s(j)} : Point{s(i)}; }

  static TorusGrid make(int k, double a, double b, int N) {
    if (k != 1 && k != 2) throw PreconditionError("TorusGrid: k must be 1 or 2");
    if (!(b > a)) throw PreconditionError("TorusGrid: s_max must exceed s_min");
    if (N < 4) throw PreconditionError("TorusGrid: at least 4 intervals per axis");
    return {k, a, b, N};
  }
};

/// Values on the nodes of a TorusGrid.
struct Field {
  TorusGrid grid;
  std::vector<double> v;

  explicit Field(const TorusGrid& g, double fill = 0.0) : grid(g), v(g.size(), fill) {}

  double& operator()(int i, int j = 0) { return v[grid.index(i, j)]; }
  double operator()(int i, int j = 0) const { return v[grid.index(i, j)]; }

  template <class F>
  static Field sample(const TorusGrid& g, F&& f) {
    Field out(g);
    for (int i = 0; i <= g.N; ++i)
      for (int j = 0; j <= (g.k == 2 ? g.N : 0); ++j) out(i, j) = f(g.point(i, j));
    return out;
  }

  double sup_abs() const {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  }
};

inline double sup_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Finite differences along one axis, second order everywhere (one-sided at
// the ends).

namespace fd {

/// First derivative of samples f[0..N] with spacing h at node i.
template <class Get>
double d1(Get&& f, int i, int N, double h) {
  if (i == 0) return (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h);
  if (i == N) return (3.0 * f(N) - 4.0 * f(N - 1) + f(N - 2)) / (2.0 * h);
  return (f(i + 1) - f(i - 1)) / (2.0 * h);
}

template <class Get>
double d2(Get&& f, int i, int N, double h) {
  if (i == 0) return (2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)) / (h * h);
  if (i == N) return (2.0 * f(N) - 5.0 * f(N - 1) + 4.0 * f(N - 2) - f(N - 3)) / (h * h);
  return (f(i + 1) - 2.0 * f(i) + f(i - 1)) / (h * h);
}

}  // namespace fd

/// Nodal gradient and Hessian of a field in s, by the stencils above. The
/// mixed derivative at interior nodes is the standard four-corner stencil,
/// which is what the discrete operator uses.
struct Derivatives {
  std::vector<Field> g;  // g[a] = d/ds_a
  std::vector<Field> H;  // H[a * k + b]
};

inline Derivatives derivatives(const Field& f) {
  const TorusGrid& G = f.grid;
  const int N = G.N, k = G.k;
  const double h = G.h();
  Derivatives d;
  d.g.assign(k, Field(G));
  d.H.assign(k * k, Field(G));
  if (k == 1) {
    for (int i = 0; i <= N; ++i) {
      auto get = [&](int m) { return f(m); };
      d.g[0](i) = fd::d1(get, i, N, h);
      d.H[0](i) = fd::d2(get, i, N, h);
    }
    return d;
  }
  for (int i = 0; i <= N; ++i) {
    for (int j = 0; j <= N; ++j) {
      auto along1 = [&](int m) { return f(m, j); };
      auto along2 = [&](int m) { return f(i, m); };
      d.g[0](i, j) = fd::d1(along1, i, N, h);
      d.g[1](i, j) = fd::d1(along2, j, N, h);
      d.H[0](i, j) = fd::d2(along1, i, N, h);
      d.H[3](i, j) = fd::d2(along2, j, N, h);
    }
  }
  for (int i = 0; i <= N; ++i) {
    for (int j = 0; j <= N; ++j) {
      double m;
      if (G.interior(i, j)) {
        m = (f(i + 1, j + 1) - f(i + 1, j - 1) - f(i - 1, j + 1) + f(i - 1, j - 1)) / (4.0 * h * h);
      } else {
        auto g2 = [&](int r) { return d.g[1](r, j); };
        m = fd::d1(g2, i, N, h);
      }
      d.H[1](i, j) = d.H[2](i, j) = m;
    }
  }
  return d;
}

/// Derivative of a field along axis `axis` at every node.
inline Field partial(const Field& f, int axis) {
  const TorusGrid& G = f.grid;
  Field out(G);
  for (int i = 0; i <= G.N; ++i)
    for (int j = 0; j <= (G.k == 2 ? G.N : 0); ++j) {
      if (axis == 0) {
        auto get = [&](int m) { return f(m, j); };
        out(i, j) = fd::d1(get, i, G.N, G.h());
      } else {
        auto get = [&](int m) { return f(i, m); };
        out(i, j) = fd::d1(get, j, G.N, G.h());
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature on the grid: trapezoid in s against dV (torus factors included).

/// Trapezoid weight of node (i, j) for the measure prod s^-2 ds dtheta.
inline double dV_weight(const TorusGrid& G, int i, int j = 0) {
  const double h = G.h();
  auto w1 = [&](int m) {
    const double s = G.s(m);
    return (m == 0 || m == G.N ? 0.5 : 1.0) * h * 2.0 * std::numbers::pi / (s * s);
  };
  return G.k == 2 ? w1(i) * w1(j) : w1(i);
}

// ---------------------------------------------------------------------------
// Local bicubic interpolation (tensor cubic Lagrange on the 4 x 4 nodes
// surrounding the point).

inline std::array<double, 4> cubic_weights(double t) {
  // nodes at -1, 0, 1, 2
  return {-t * (t - 1.0) * (t - 2.0) / 6.0, (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
          -(t + 1.0) * t * (t - 2.0) / 2.0, (t + 1.0) * t * (t - 1.0) / 6.0};
}

inline double interpolate(const Field& f, const Point& s) {
  const TorusGrid& G = f.grid;
  const double h = G.h();
  auto locate = [&](double x, int& base, std::array<double, 4>& w) {
    if (x < G.a - 1e-12 * h || x > G.b + 1e-12 * h)
      throw DomainError("interpolate: point outside the grid");
    int c = static_cast<int>(std::floor((x - G.a) / h));
    c = std::clamp(c, 1, G.N - 2);
    base = c - 1;
    w = cubic_weights((x - G.s(c)) / h);
  };
  int bi, bj = 0;
  std::array<double, 4> wi, wj{1.0, 0.0, 0.0, 0.0};
  locate(s[0], bi, wi);
  if (G.k == 1) {
    double v = 0.0;
    for (int p = 0; p < 4; ++p) v += wi[p] * f(bi + p);
    return v;
  }
  locate(s[1], bj, wj);
  double v = 0.0;
  for (int p = 0; p < 4; ++p) {
    double row = 0.0;
    for (int q = 0; q < 4; ++q) row += wj[q] * f(bi + p, bj + q);
    v += wi[p] * row;
  }
  return v;
}

}  // namespace cuspma
