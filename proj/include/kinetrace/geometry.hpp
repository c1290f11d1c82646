#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "kinetrace/domain.hpp"
#include "kinetrace/errors.hpp"
#include "kinetrace/rng.hpp"
#include "kinetrace/vec.hpp"

namespace kinetrace {

// Sign of the angular exit-time gradient formula, calibrated once against
// finite differences on the unit disk and frozen. With this sign the disk
// closed form d/dbeta of 2*cos(beta) = -2*sin(beta) is reproduced; the
// position-gradient formula needs no such factor.
inline constexpr double kGradTauOmegaSign = -1.0;

enum class TraceSide { incoming, outgoing, grazing };

struct PhasePoint {
  Vec x;
  Vec v;
};

struct BoundaryPoint {
  Vec x;       // on the boundary
  Vec v;
  TraceSide side = TraceSide::grazing;
  double cosine = 0.0;  // v.n / |v|
};

inline BoundaryPoint classify_boundary(const Domain& dom, const Vec& x,
                                       const Vec& v) {
  BoundaryPoint b;
  b.x = x;
  b.v = v;
  Vec n = dom.normal(x);
  double c = dot(v, n) / norm(v);
  b.cosine = c;
  if (c > kGrazeTol)
    b.side = TraceSide::outgoing;
  else if (c < -kGrazeTol)
    b.side = TraceSide::incoming;
  else
    b.side = TraceSide::grazing;
  return b;
}

// Backward footpoint map: (x,v) with x in the closure of Omega is carried to
// the boundary point it came from, (x - tau * v, v). For outgoing boundary
// points tau is the full chord time.
struct FlowResult {
  BoundaryPoint point;
  double tau = 0.0;
};

inline FlowResult ballistic_flow(const Domain& dom, const Vec& x,
                                 const Vec& v) {
  FlowResult r;
  r.tau = dom.exit_time_bwd(x, v);
  Vec z = dom.snap_to_boundary(x - v * r.tau);
  r.point = classify_boundary(dom, z, v);
  return r;
}

// Forward footpoint map: (z,v) is carried to (z + tau * v, v) on the
// outgoing side.
inline FlowResult ballistic_flow_inv(const Domain& dom, const Vec& z,
                                     const Vec& v) {
  FlowResult r;
  r.tau = dom.exit_time_fwd(z, v);
  Vec x = dom.snap_to_boundary(z + v * r.tau);
  r.point = classify_boundary(dom, x, v);
  return r;
}

// Directional derivative of the backward exit time in the base point, for a
// tangential direction h at x: <h, n(xi)> / <omega, n(xi)> evaluated at the
// backward footpoint xi. Unit-speed direction omega.
inline double grad_tau_x(const Domain& dom, const Vec& x, const Vec& omega,
                         const Vec& h) {
  FlowResult f = ballistic_flow(dom, x, omega);
  Vec n = dom.normal(f.point.x);
  double den = dot(omega, n);
  if (std::fabs(den) < kGrazeTol)
    throw NumericalError("grad_tau_x: grazing footpoint");
  return dot(h, n) / den;
}

// Directional derivative of the backward exit time in the direction, for h
// tangent to the unit sphere at omega.
inline double grad_tau_omega(const Domain& dom, const Vec& x, const Vec& omega,
                             const Vec& h) {
  FlowResult f = ballistic_flow(dom, x, omega);
  Vec n = dom.normal(f.point.x);
  double den = dot(omega, n);
  if (std::fabs(den) < kGrazeTol)
    throw NumericalError("grad_tau_omega: grazing footpoint");
  return kGradTauOmegaSign * f.tau * dot(h, n) / den;
}

// det(c * Id + a u^T) = c^(d-1) * (c + a.u); d inferred from the vectors.
inline double det_rank_one_update(double c, const std::vector<double>& a,
                                  const std::vector<double>& u) {
  if (a.size() != u.size())
    throw NumericalError("det_rank_one_update: size mismatch");
  size_t d = a.size();
  double au = 0.0;
  for (size_t i = 0; i < d; ++i) au += a[i] * u[i];
  double p = 1.0;
  for (size_t i = 0; i + 1 < d; ++i) p *= c;
  return p * (c + au);
}

inline double sphere_area(int d) {
  // |S^(d-1)| = 2 pi^(d/2) / Gamma(d/2)
  return 2.0 * std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d);
}

// Product of the sine factors of the spherical polar volume element at a
// direction omega (last coordinate playing the polar axis):
// sin^(d-2)(theta_{d-1}) * sin^(d-3)(theta_{d-2}) * ... * sin(theta_2).
// For d = 2 the product is empty and equals 1.
inline double polar_jacobian(const std::vector<double>& omega) {
  int d = static_cast<int>(omega.size());
  double jac = 1.0;
  double rem = 1.0;  // norm of the remaining leading block
  for (int j = d; j >= 3; --j) {
    double c = (rem > 0.0) ? omega[static_cast<size_t>(j - 1)] / rem : 1.0;
    c = std::clamp(c, -1.0, 1.0);
    double s = std::sqrt(1.0 - c * c);
    for (int p = 0; p < j - 2; ++p) jac *= s;
    rem *= s;
    if (rem == 0.0) break;
  }
  return jac;
}

struct DegenerateMeasure {
  double estimate = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

// Monte Carlo estimate of the surface measure of the hemisphere directions
// whose polar volume element is <= eps. For d = 2 the element is identically
// 1 and the set is empty.
inline DegenerateMeasure degenerate_direction_measure(int d, double eps,
                                                      long n_samples,
                                                      uint64_t seed) {
  if (d < 2) throw NumericalError("degenerate_direction_measure: d < 2");
  DegenerateMeasure out;
  out.samples = n_samples;
  if (d == 2) return out;
  CounterRng rng(seed, 0xdeade1ULL);
  std::vector<double> w(static_cast<size_t>(d));
  long hits = 0;
  for (long i = 0; i < n_samples; ++i) {
    double nrm2 = 0.0;
    for (int j = 0; j < d; j += 2) {
      double g1, g2;
      rng.normal_pair(g1, g2);
      w[static_cast<size_t>(j)] = g1;
      if (j + 1 < d) w[static_cast<size_t>(j + 1)] = g2;
    }
    for (int j = 0; j < d; ++j) nrm2 += w[static_cast<size_t>(j)] * w[static_cast<size_t>(j)];
    double nrm = std::sqrt(nrm2);
    if (nrm == 0.0) continue;
    for (int j = 0; j < d; ++j) w[static_cast<size_t>(j)] /= nrm;
    if (w[static_cast<size_t>(d - 1)] < 0.0) continue;  // hemisphere only
    if (polar_jacobian(w) <= eps) ++hits;
  }
  double area = sphere_area(d);
  double frac = static_cast<double>(hits) / static_cast<double>(n_samples);
  out.estimate = frac * area;
  out.std_error =
      area * std::sqrt(std::max(frac * (1.0 - frac), 1e-300) /
                       static_cast<double>(n_samples));
  return out;
}

}  // namespace kinetrace
