#pragma once

#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "kinetrace/boundary.hpp"
#include "kinetrace/domain.hpp"
#include "kinetrace/grids.hpp"
#include "kinetrace/operators.hpp"
#include "kinetrace/rng.hpp"
#include "kinetrace/vmeasure.hpp"

namespace kinetrace {

// Free flight between walls, random post-collision velocity at each wall
// hit. Every random draw comes from a counter generator keyed by (seed,
// particle, event), so trajectories are reproducible bit for bit under any
// thread partition.

struct Particle {
  Vec x;
  Vec v;
  double t = 0.0;
  int64_t events = 0;
  bool frozen = false;
};

struct PdmpModel {
  const Domain* dom = nullptr;
  const PartlyDiffuseBoundary* bc = nullptr;
  uint64_t seed = 0;
  double rho_freeze = 1e-6;   // particles slower than this stop moving
  int64_t max_events = 50'000'000;  // per particle, guards grazing loops
};

// Substream reserved for initial draws; wall events use 1 + event index.
inline constexpr uint64_t kSpawnSubstream = 0;

inline double boundary_param(const Domain& dom, const Vec& x) {
  if (dom.dim() == 2) return dom.boundary_arc(x) / dom.perimeter();
  double phi = std::atan2(x[1], x[0]);
  if (phi < 0.0) phi += 2.0 * M_PI;
  return phi / (2.0 * M_PI);
}

inline void advance_particle(const PdmpModel& model, Particle& p,
                             uint64_t pid, double t_target) {
  const Domain& dom = *model.dom;
  if (p.frozen || norm(p.v) == 0.0) {
    p.t = t_target;
    return;
  }
  while (p.t < t_target) {
    double tau = dom.exit_time_fwd(p.x, p.v);
    if (p.t + tau >= t_target) {
      p.x = p.x + p.v * (t_target - p.t);
      p.t = t_target;
      return;
    }
    p.x = dom.snap_to_boundary(p.x + p.v * tau);
    p.t += tau;
    ++p.events;
    if (p.events > model.max_events)
      throw NumericalError("particle exceeded the wall-event budget");
    KernelContext ctx{p.x, dom.normal(p.x)};
    CounterRng rng(model.seed, pid, 1 + static_cast<uint64_t>(p.events));
    p.v = sample_post_collision(*model.bc, ctx, boundary_param(dom, p.x),
                                p.v, rng);
    if (norm(p.v) < model.rho_freeze) {
      p.frozen = true;
      p.t = t_target;
      return;
    }
  }
}

inline void simulate_to(const PdmpModel& model, std::vector<Particle>& ps,
                        double t_target, int n_threads = 1) {
  if (n_threads <= 1) {
    for (size_t i = 0; i < ps.size(); ++i)
      advance_particle(model, ps[i], static_cast<uint64_t>(i), t_target);
    return;
  }
  std::vector<std::thread> workers;
  size_t chunk = (ps.size() + static_cast<size_t>(n_threads) - 1) /
                 static_cast<size_t>(n_threads);
  for (int w = 0; w < n_threads; ++w) {
    size_t lo = static_cast<size_t>(w) * chunk;
    size_t hi = std::min(ps.size(), lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&model, &ps, lo, hi, t_target]() {
      for (size_t i = lo; i < hi; ++i)
        advance_particle(model, ps[i], static_cast<uint64_t>(i), t_target);
    });
  }
  for (std::thread& w : workers) w.join();
}

// --- initial conditions -----------------------------------------------------

inline Vec sample_position_uniform(const Domain& dom, CounterRng& rng) {
  Vec lo, hi;
  dom.bounding_box(lo, hi);
  for (int it = 0; it < 100000; ++it) {
    Vec x = zero_vec(dom.dim());
    for (int i = 0; i < dom.dim(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
    if (dom.inside(x)) return x;
  }
  throw NumericalError("position sampler: domain too thin for its box");
}

// Product law: position uniform on the domain, velocity from the
// normalized velocity measure.
inline std::vector<Particle> spawn_product(const PdmpModel& model,
                                           const VelocityMeasure& m,
                                           size_t n) {
  std::vector<Particle> ps(n);
  for (size_t i = 0; i < n; ++i) {
    CounterRng rng(model.seed, static_cast<uint64_t>(i), kSpawnSubstream);
    ps[i].x = sample_position_uniform(*model.dom, rng);
    double rho = m.sample_speed(rng);
    ps[i].v = sample_direction_uniform(m.dim(), rng) * rho;
    ps[i].v.d = m.dim();
  }
  return ps;
}

inline std::vector<Particle> spawn_point(const Vec& x, const Vec& v,
                                         size_t n) {
  std::vector<Particle> ps(n);
  for (Particle& p : ps) {
    p.x = x;
    p.v = v;
  }
  return ps;
}

// Draw initial states from a nonnegative phase-cell mass vector: pick the
// cell by mass, then spread uniformly inside it (exact radial law within
// the speed cell; atoms stay atomic).
inline std::vector<Particle> spawn_from_cells(const PdmpModel& model,
                                              const PhaseGrid& pg,
                                              const VelocityMeasure& m,
                                              const DVec& masses, size_t n) {
  double total = vec_sum(masses);
  if (total <= 0.0) throw ConfigError("spawn_from_cells: empty mass vector");
  std::vector<double> cum(masses.size());
  double acc = 0.0;
  for (size_t c = 0; c < masses.size(); ++c) {
    acc += masses[c];
    cum[c] = acc;
  }
  bool atomic = m.radial_kind() == VelocityMeasure::RadialKind::atoms;
  const SpeedPartition& sp = pg.speed();
  const DirectionPartition& dp = pg.direction();
  int d = dp.dim;
  std::vector<Particle> ps(n);
  for (size_t i = 0; i < n; ++i) {
    CounterRng rng(model.seed, static_cast<uint64_t>(i), kSpawnSubstream);
    double u = rng.next_double() * total;
    size_t cell = static_cast<size_t>(
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (cell >= masses.size()) cell = masses.size() - 1;
    int o = static_cast<int>(cell % static_cast<size_t>(pg.n_dir()));
    int s = static_cast<int>((cell / static_cast<size_t>(pg.n_dir())) %
                             static_cast<size_t>(pg.n_speed()));
    int space = static_cast<int>(cell / (static_cast<size_t>(pg.n_dir()) *
                                         static_cast<size_t>(pg.n_speed())));
    // Position: uniform over box intersect domain.
    Vec x;
    bool ok = false;
    for (int it = 0; it < 100000 && !ok; ++it) {
      x = pg.sample_in_box(space, rng);
      ok = pg.domain().inside(x);
    }
    if (!ok) throw NumericalError("spawn_from_cells: box has no interior");
    ps[i].x = x;
    // Speed: exact radial law within the cell.
    double rho;
    if (atomic) {
      rho = sp.rep[static_cast<size_t>(s)];
    } else {
      double a = sp.edges[static_cast<size_t>(s)];
      double b = sp.edges[static_cast<size_t>(s) + 1];
      double w = rng.next_double();
      rho = std::pow(std::pow(a, d) + w * (std::pow(b, d) - std::pow(a, d)),
                     1.0 / d);
    }
    // Direction: uniform within the direction cell.
    Vec dir;
    if (d == 2) {
      double h = 2.0 * M_PI / dp.n_angle;
      double ang = (o + rng.next_double()) * h;
      dir = Vec(std::cos(ang), std::sin(ang));
    } else {
      int band = o / dp.n_angle, sec = o % dp.n_angle;
      double hc = 2.0 / dp.n_polar, hphi = 2.0 * M_PI / dp.n_angle;
      double c = -1.0 + (band + rng.next_double()) * hc;
      double ssin = std::sqrt(std::max(0.0, 1.0 - c * c));
      double phi = (sec + rng.next_double()) * hphi;
      dir = Vec(ssin * std::cos(phi), ssin * std::sin(phi), c);
    }
    ps[i].v = dir * rho;
    ps[i].v.d = d;
  }
  return ps;
}

// --- observables ------------------------------------------------------------

struct CountReport {
  DVec counts;          // per phase cell
  int64_t in_grid = 0;
  int64_t off_grid = 0;  // outside the box or below the speed floor
  int64_t frozen = 0;
};

inline CountReport empirical_counts(const std::vector<Particle>& ps,
                                    const PhaseGrid& pg) {
  CountReport rep;
  rep.counts.assign(static_cast<size_t>(pg.n_cells()), 0.0);
  for (const Particle& p : ps) {
    if (p.frozen) ++rep.frozen;
    long id = pg.locate(p.x, p.v);
    if (id < 0) {
      ++rep.off_grid;
      continue;
    }
    rep.counts[static_cast<size_t>(id)] += 1.0;
    ++rep.in_grid;
  }
  return rep;
}

// Time-averaged cell occupation sampled on a uniform time comb.
struct OccupationRecorder {
  DVec counts;
  int64_t samples = 0;
  int64_t in_grid = 0;
  int64_t off_grid = 0;

  explicit OccupationRecorder(const PhaseGrid& pg)
      : counts(static_cast<size_t>(pg.n_cells()), 0.0) {}

  void record(const std::vector<Particle>& ps, const PhaseGrid& pg) {
    for (const Particle& p : ps) {
      long id = pg.locate(p.x, p.v);
      if (id < 0) {
        ++off_grid;
        continue;
      }
      counts[static_cast<size_t>(id)] += 1.0;
      ++in_grid;
    }
    ++samples;
  }

  DVec normalized() const {
    DVec out = counts;
    double s = vec_sum(out);
    if (s > 0.0)
      for (double& v : out) v /= s;
    return out;
  }
};

inline double highspeed_fraction(const std::vector<Particle>& ps,
                                 double rho_cut) {
  if (ps.empty()) return 0.0;
  size_t k = 0;
  for (const Particle& p : ps)
    if (norm(p.v) >= rho_cut) ++k;
  return static_cast<double>(k) / static_cast<double>(ps.size());
}

// Fraction currently inside the compact speed window [lo, hi]; under
// sweeping this drains toward zero speed.
inline double window_fraction(const std::vector<Particle>& ps, double lo,
                              double hi) {
  if (ps.empty()) return 0.0;
  size_t k = 0;
  for (const Particle& p : ps) {
    double sp = norm(p.v);
    if (sp >= lo && sp <= hi) ++k;
  }
  return static_cast<double>(k) / static_cast<double>(ps.size());
}

inline int64_t total_events(const std::vector<Particle>& ps) {
  int64_t n = 0;
  for (const Particle& p : ps) n += p.events;
  return n;
}

inline int64_t frozen_count(const std::vector<Particle>& ps) {
  int64_t n = 0;
  for (const Particle& p : ps)
    if (p.frozen) ++n;
  return n;
}

}  // namespace kinetrace
