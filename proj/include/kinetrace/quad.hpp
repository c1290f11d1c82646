#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace kinetrace {

struct Quadrature1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Legendre nodes/weights on [-1,1] via Newton iteration on P_n.
inline Quadrature1D gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n < 1");
  Quadrature1D q;
  q.nodes.resize(static_cast<size_t>(n));
  q.weights.resize(static_cast<size_t>(n));
  int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Chebyshev-based initial guess.
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      double dx = p0 / pp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    q.nodes[static_cast<size_t>(i)] = -x;
    q.nodes[static_cast<size_t>(n - 1 - i)] = x;
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    q.weights[static_cast<size_t>(i)] = w;
    q.weights[static_cast<size_t>(n - 1 - i)] = w;
  }
  return q;
}

template <typename F>
double integrate_gl(F&& f, double a, double b, const Quadrature1D& q) {
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (size_t i = 0; i < q.nodes.size(); ++i)
    s += q.weights[i] * f(mid + half * q.nodes[i]);
  return s * half;
}

template <typename F>
double integrate_gl(F&& f, double a, double b, int n = 32) {
  return integrate_gl(std::forward<F>(f), a, b, gauss_legendre(n));
}

// Composite GL over consecutive panels given by edge list.
template <typename F>
double integrate_panels(F&& f, const std::vector<double>& edges,
                        const Quadrature1D& q) {
  double s = 0.0;
  for (size_t i = 0; i + 1 < edges.size(); ++i)
    s += integrate_gl(f, edges[i], edges[i + 1], q);
  return s;
}

// Geometric panel edges from a down to a*ratio^k >= lo (ratio < 1), ascending.
inline std::vector<double> geometric_edges(double lo, double hi, double ratio) {
  std::vector<double> e;
  double x = hi;
  e.push_back(hi);
  while (x * ratio > lo * (1.0 + 1e-14)) {
    x *= ratio;
    e.push_back(x);
  }
  e.push_back(lo);
  // ascending order
  std::vector<double> r(e.rbegin(), e.rend());
  if (r.front() > r.back()) throw std::logic_error("geometric_edges");
  return r;
}

// Integral of f over (0, b] for integrands with power/log behaviour at 0:
// substitute u = log(1/rho) and integrate GL panels out to u = u_max, then
// add a tail estimate assuming f(e^-u)e^-u ~ c/u^2 beyond u_max (the
// slowest-decaying case that still converges; faster decay makes the tail
// negligible).
template <typename F>
double integrate_radial_to_zero(F&& f, double b, double u_max = 700.0) {
  double u0 = std::log(1.0 / b);
  auto g = [&](double u) {
    double rho = std::exp(-u);
    return f(rho) * rho;
  };
  Quadrature1D q = gauss_legendre(16);
  double s = 0.0;
  double u = u0;
  double step = 1.0;
  while (u < u_max) {
    double u1 = std::min(u + step, u_max);
    s += integrate_gl(g, u, u1, q);
    u = u1;
    step = std::min(step * 1.5, 32.0);
  }
  // Tail: estimate local power q_eff from the last two octave values.
  double ga = g(u_max * 0.98), gb = g(u_max);
  if (gb > 0.0 && ga > 0.0) {
    double p = std::log(ga / gb) / std::log(u_max / (0.98 * u_max));
    if (p > 1.0 + 1e-9)
      s += gb * u_max / (p - 1.0);
  }
  return s;
}

}  // namespace kinetrace
