#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "kinetrace/errors.hpp"
#include "kinetrace/geometry.hpp"
#include "kinetrace/quad.hpp"
#include "kinetrace/rng.hpp"
#include "kinetrace/vec.hpp"

namespace kinetrace {

// Rotation-invariant velocity measure, described by its radial image m0:
// either an absolutely continuous part with density w on [rho_min, rho_max]
// (Lebesgue preset: w = |S^(d-1)| rho^(d-1)) or a finite list of speed
// atoms carrying their m0-mass. Integrals split as
//   int psi dm = 1/|S^(d-1)| * int m0(drho) int_{S^(d-1)} psi(rho w) dsigma.
class VelocityMeasure {
 public:
  enum class RadialKind { lebesgue, atoms };

  static VelocityMeasure lebesgue_annulus(int dim, double rho_min,
                                          double rho_max) {
    if (rho_min < 0.0 || rho_max <= rho_min)
      throw ConfigError("lebesgue_annulus: need 0 <= rho_min < rho_max");
    VelocityMeasure m;
    m.dim_ = dim;
    m.kind_ = RadialKind::lebesgue;
    m.rho_min_ = rho_min;
    m.rho_max_ = rho_max;
    return m;
  }

  static VelocityMeasure single_speed(int dim, double rho, double mass = 1.0) {
    VelocityMeasure m;
    m.dim_ = dim;
    m.kind_ = RadialKind::atoms;
    m.atoms_rho_ = {rho};
    m.atoms_mass_ = {mass};
    m.rho_min_ = rho;
    m.rho_max_ = rho;
    return m;
  }

  static VelocityMeasure multigroup(int dim, std::vector<double> speeds,
                                    std::vector<double> masses) {
    if (speeds.empty() || speeds.size() != masses.size())
      throw ConfigError("multigroup: speeds/masses must match and be nonempty");
    VelocityMeasure m;
    m.dim_ = dim;
    m.kind_ = RadialKind::atoms;
    m.atoms_rho_ = std::move(speeds);
    m.atoms_mass_ = std::move(masses);
    m.rho_min_ = *std::min_element(m.atoms_rho_.begin(), m.atoms_rho_.end());
    m.rho_max_ = *std::max_element(m.atoms_rho_.begin(), m.atoms_rho_.end());
    return m;
  }

  int dim() const { return dim_; }
  RadialKind radial_kind() const { return kind_; }
  double rho_min() const { return rho_min_; }
  double rho_max() const { return rho_max_; }
  const std::vector<double>& atom_speeds() const { return atoms_rho_; }
  const std::vector<double>& atom_masses() const { return atoms_mass_; }

  double radial_density(double rho) const {
    if (kind_ != RadialKind::lebesgue) return 0.0;
    if (rho < rho_min_ || rho > rho_max_) return 0.0;
    return sphere_area(dim_) * std::pow(rho, dim_ - 1);
  }

  // m0 mass of [a,b] (clipped to the support).
  double radial_mass(double a, double b) const {
    if (kind_ == RadialKind::lebesgue) {
      a = std::max(a, rho_min_);
      b = std::min(b, rho_max_);
      if (b <= a) return 0.0;
      double d = static_cast<double>(dim_);
      return sphere_area(dim_) * (std::pow(b, d) - std::pow(a, d)) / d;
    }
    double s = 0.0;
    for (size_t i = 0; i < atoms_rho_.size(); ++i)
      if (atoms_rho_[i] >= a && atoms_rho_[i] <= b) s += atoms_mass_[i];
    return s;
  }

  // m0 centroid of [a,b]; used as the representative speed of grid cells.
  double radial_centroid(double a, double b) const {
    if (kind_ == RadialKind::lebesgue) {
      a = std::max(a, rho_min_);
      b = std::min(b, rho_max_);
      double d = static_cast<double>(dim_);
      double m = (std::pow(b, d) - std::pow(a, d)) / d;
      double m1 = (std::pow(b, d + 1.0) - std::pow(a, d + 1.0)) / (d + 1.0);
      return m > 0.0 ? m1 / m : 0.5 * (a + b);
    }
    double s = 0.0, sr = 0.0;
    for (size_t i = 0; i < atoms_rho_.size(); ++i)
      if (atoms_rho_[i] >= a && atoms_rho_[i] <= b) {
        s += atoms_mass_[i];
        sr += atoms_mass_[i] * atoms_rho_[i];
      }
    return s > 0.0 ? sr / s : 0.5 * (a + b);
  }

  double total_mass() const { return radial_mass(0.0, rho_max_); }

  // Exact inverse-CDF speed sample (the Lebesgue radial CDF is a power law).
  double sample_speed(CounterRng& rng) const {
    if (kind_ == RadialKind::lebesgue) {
      double d = static_cast<double>(dim_);
      double u = rng.next_double();
      double lo = std::pow(rho_min_, d), hi = std::pow(rho_max_, d);
      return std::pow(lo + u * (hi - lo), 1.0 / d);
    }
    double total = total_mass();
    double u = rng.next_double() * total;
    double acc = 0.0;
    for (size_t i = 0; i < atoms_rho_.size(); ++i) {
      acc += atoms_mass_[i];
      if (u <= acc) return atoms_rho_[i];
    }
    return atoms_rho_.back();
  }

 private:
  int dim_ = 2;
  RadialKind kind_ = RadialKind::lebesgue;
  double rho_min_ = 0.0, rho_max_ = 1.0;
  std::vector<double> atoms_rho_, atoms_mass_;
};

// --- quadratures -----------------------------------------------------------

struct SpeedQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;  // m0 weights; sum equals the m0 total mass
};

// Gauss-Legendre panels per decade of speed for densities (refined toward
// small speeds); atoms are carried verbatim.
inline SpeedQuadrature build_speed_quadrature(const VelocityMeasure& m,
                                              int points_per_panel = 64,
                                              double floor_rho = 0.0) {
  SpeedQuadrature sq;
  if (m.radial_kind() == VelocityMeasure::RadialKind::atoms) {
    sq.nodes = m.atom_speeds();
    sq.weights = m.atom_masses();
    return sq;
  }
  double lo = std::max(m.rho_min(), floor_rho);
  if (lo <= 0.0) lo = m.rho_max() * 1e-12;
  std::vector<double> edges = geometric_edges(lo, m.rho_max(), 0.1);
  Quadrature1D gl = gauss_legendre(points_per_panel);
  for (size_t p = 0; p + 1 < edges.size(); ++p) {
    double a = edges[p], b = edges[p + 1];
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (size_t i = 0; i < gl.nodes.size(); ++i) {
      double rho = mid + half * gl.nodes[i];
      sq.nodes.push_back(rho);
      sq.weights.push_back(gl.weights[i] * half * m.radial_density(rho));
    }
  }
  return sq;
}

struct DirectionQuadrature {
  std::vector<Vec> nodes;       // unit vectors
  std::vector<double> weights;  // sigma weights; sum = |S^(d-1)|
};

// d=2: uniform angles. d=3: Gauss-Legendre in cos(theta) times uniform phi.
inline DirectionQuadrature build_direction_quadrature(int dim, int n_primary,
                                                      int n_azimuth = 0) {
  DirectionQuadrature dq;
  if (dim == 2) {
    double h = 2.0 * M_PI / n_primary;
    for (int i = 0; i < n_primary; ++i) {
      double a = (i + 0.5) * h;
      dq.nodes.push_back(Vec(std::cos(a), std::sin(a)));
      dq.weights.push_back(h);
    }
    return dq;
  }
  if (n_azimuth <= 0) n_azimuth = 2 * n_primary;
  Quadrature1D gl = gauss_legendre(n_primary);
  double hphi = 2.0 * M_PI / n_azimuth;
  for (int i = 0; i < n_primary; ++i) {
    double c = gl.nodes[static_cast<size_t>(i)];
    double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    for (int j = 0; j < n_azimuth; ++j) {
      double phi = (j + 0.5) * hphi;
      dq.nodes.push_back(Vec(s * std::cos(phi), s * std::sin(phi), c));
      dq.weights.push_back(gl.weights[static_cast<size_t>(i)] * hphi);
    }
  }
  return dq;
}

// Polar-decomposed integral of psi against the measure.
template <typename F>
double integrate(const VelocityMeasure& m, const SpeedQuadrature& sq,
                 const DirectionQuadrature& dq, F&& psi) {
  double inv_area = 1.0 / sphere_area(m.dim());
  double total = 0.0;
  for (size_t i = 0; i < sq.nodes.size(); ++i) {
    double rho = sq.nodes[i];
    double s = 0.0;
    for (size_t j = 0; j < dq.nodes.size(); ++j) {
      Vec v = dq.nodes[j] * rho;
      v.d = m.dim();
      s += dq.weights[j] * psi(v);
    }
    total += sq.weights[i] * s;
  }
  return total * inv_area;
}

template <typename F>
double integrate(const VelocityMeasure& m, F&& psi, int points_per_panel = 64,
                 int n_dir = 256) {
  SpeedQuadrature sq = build_speed_quadrature(m, points_per_panel);
  DirectionQuadrature dq =
      build_direction_quadrature(m.dim(), m.dim() == 2 ? n_dir : n_dir / 8);
  return integrate(m, sq, dq, psi);
}

// --- grid partitions -------------------------------------------------------

struct SpeedPartition {
  std::vector<double> edges;  // size n+1
  std::vector<double> rep;    // m0 centroids
  std::vector<double> mass;   // m0 masses
  int locate(double rho) const {
    if (rho < edges.front() || rho > edges.back()) return -1;
    int lo = 0, hi = static_cast<int>(edges.size()) - 1;
    while (hi - lo > 1) {
      int m = (lo + hi) / 2;
      if (edges[static_cast<size_t>(m)] <= rho)
        lo = m;
      else
        hi = m;
    }
    return lo;
  }
};

inline SpeedPartition build_speed_partition(const VelocityMeasure& m,
                                            int n_cells, bool log_spacing,
                                            double floor_rho = 0.0) {
  SpeedPartition p;
  if (m.radial_kind() == VelocityMeasure::RadialKind::atoms) {
    // One cell per atom.
    std::vector<double> sp = m.atom_speeds();
    std::vector<size_t> order(sp.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return sp[a] < sp[b]; });
    for (size_t k = 0; k < order.size(); ++k) {
      double rho = sp[order[k]];
      double lo = (k == 0) ? rho * 0.5 : 0.5 * (rho + sp[order[k - 1]]);
      double hi =
          (k + 1 == order.size()) ? rho * 1.5 : 0.5 * (rho + sp[order[k + 1]]);
      if (p.edges.empty()) p.edges.push_back(lo);
      p.edges.push_back(hi);
      p.rep.push_back(rho);
      p.mass.push_back(m.atom_masses()[order[k]]);
    }
    return p;
  }
  double lo = std::max(m.rho_min(), floor_rho);
  double hi = m.rho_max();
  if (lo <= 0.0) lo = hi * 1e-12;
  if (lo >= hi) throw ConfigError("speed partition: empty speed range");
  p.edges.resize(static_cast<size_t>(n_cells) + 1);
  for (int i = 0; i <= n_cells; ++i) {
    double t = static_cast<double>(i) / n_cells;
    p.edges[static_cast<size_t>(i)] =
        log_spacing ? lo * std::pow(hi / lo, t) : lo + t * (hi - lo);
  }
  for (int i = 0; i < n_cells; ++i) {
    double a = p.edges[static_cast<size_t>(i)], b = p.edges[static_cast<size_t>(i) + 1];
    p.rep.push_back(m.radial_centroid(a, b));
    p.mass.push_back(m.radial_mass(a, b));
  }
  return p;
}

struct DirectionPartition {
  int dim = 2;
  int n_angle = 0;            // d=2 sectors, or azimuth sectors in d=3
  int n_polar = 0;            // d=3 cos(theta) bands
  std::vector<Vec> rep;
  std::vector<double> sigma_weight;  // sums to |S^(d-1)|

  int size() const { return static_cast<int>(rep.size()); }

  int locate(const Vec& dir) const {
    if (dim == 2) {
      double a = std::atan2(dir[1], dir[0]);
      if (a < 0.0) a += 2.0 * M_PI;
      int i = static_cast<int>(a / (2.0 * M_PI) * n_angle);
      return std::clamp(i, 0, n_angle - 1);
    }
    double n = norm(dir);
    double c = std::clamp(dir[2] / n, -1.0, 1.0);
    int band = std::clamp(static_cast<int>((c + 1.0) * 0.5 * n_polar), 0,
                          n_polar - 1);
    double a = std::atan2(dir[1], dir[0]);
    if (a < 0.0) a += 2.0 * M_PI;
    int sec = std::clamp(static_cast<int>(a / (2.0 * M_PI) * n_angle), 0,
                         n_angle - 1);
    return band * n_angle + sec;
  }
};

// d=2: uniform angular sectors (even count keeps the two trace sides in
// exact bijection under v -> -v). d=3: uniform cos(theta) bands x sectors.
inline DirectionPartition build_direction_partition(int dim, int n_angle,
                                                    int n_polar = 0) {
  DirectionPartition dp;
  dp.dim = dim;
  dp.n_angle = n_angle;
  if (dim == 2) {
    if (n_angle % 2 != 0)
      throw ConfigError("direction partition: angle cell count must be even");
    double h = 2.0 * M_PI / n_angle;
    for (int i = 0; i < n_angle; ++i) {
      double a = (i + 0.5) * h;
      dp.rep.push_back(Vec(std::cos(a), std::sin(a)));
      dp.sigma_weight.push_back(h);
    }
    return dp;
  }
  if (n_polar <= 0) n_polar = std::max(2, n_angle / 2);
  if (n_polar % 2 != 0)
    throw ConfigError("direction partition: polar band count must be even");
  dp.n_polar = n_polar;
  double hc = 2.0 / n_polar;
  double hphi = 2.0 * M_PI / n_angle;
  for (int b = 0; b < n_polar; ++b) {
    double c = -1.0 + (b + 0.5) * hc;
    double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    for (int j = 0; j < n_angle; ++j) {
      double phi = (j + 0.5) * hphi;
      dp.rep.push_back(Vec(s * std::cos(phi), s * std::sin(phi), c));
      dp.sigma_weight.push_back(hc * hphi);
    }
  }
  return dp;
}

// --- sampling --------------------------------------------------------------

inline Vec sample_direction_uniform(int dim, CounterRng& rng) {
  if (dim == 2) {
    double a = rng.uniform(0.0, 2.0 * M_PI);
    return Vec(std::cos(a), std::sin(a));
  }
  double c = rng.uniform(-1.0, 1.0);
  double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  double phi = rng.uniform(0.0, 2.0 * M_PI);
  return Vec(s * std::cos(phi), s * std::sin(phi), c);
}

inline Vec sample_velocity_uniform(const VelocityMeasure& m, CounterRng& rng) {
  double rho = m.sample_speed(rng);
  Vec w = sample_direction_uniform(m.dim(), rng);
  Vec v = w * rho;
  v.d = m.dim();
  return v;
}

struct RejectionStats {
  long proposals = 0;
  long accepts = 0;
};

// Samples the law g(v) m(dv) / norm by rejection against the bare measure;
// g_max must dominate g on the support.
inline Vec sample_velocity(const VelocityMeasure& m,
                           const std::function<double(const Vec&)>& g,
                           double g_max, CounterRng& rng,
                           RejectionStats* stats = nullptr,
                           int max_rejections = 1000000) {
  for (int k = 0; k < max_rejections; ++k) {
    Vec v = sample_velocity_uniform(m, rng);
    double a = g(v) / g_max;
    if (stats) ++stats->proposals;
    if (a > 1.0 + 1e-12)
      throw NumericalError("sample_velocity: envelope violated");
    if (rng.next_double() < a) {
      if (stats) ++stats->accepts;
      return v;
    }
  }
  throw NumericalError("sample_velocity: rejection budget exhausted");
}

// Trace-measure weight |v.n| * (m cell weight) of a velocity cell seen from
// a boundary point with outward normal n.
inline double mu_weight(const Vec& n, const Vec& v_rep, double m_cell_weight) {
  return std::fabs(dot(v_rep, n)) * m_cell_weight;
}

}  // namespace kinetrace
