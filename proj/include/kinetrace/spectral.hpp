#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "kinetrace/operators.hpp"
#include "kinetrace/rng.hpp"

namespace kinetrace {

// --- stationary boundary mass ----------------------------------------------

struct EigenResult {
  DVec phi;         // fixed point, l1 normalized
  double residual;  // ||A phi - phi||_1
  int iterations = 0;
  bool converged = false;
  bool period2 = false;  // reached through averaging an exact 2-cycle
};

// Power iteration for a column-stochastic mass map. A 2-cycle (flip maps
// whose square is the identity) is detected by comparing iterates two
// steps apart; the pair average is then itself invariant.
template <typename ApplyFn>
EigenResult stationary_mass(ApplyFn&& A, const DVec& start, double tol = 1e-11,
                            int max_iter = 20000) {
  EigenResult res;
  DVec x = start;
  normalize_l1(x);
  DVec prev;
  double r = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    DVec y = A(x);
    r = l1_diff(y, x);
    if (r < tol) {
      normalize_l1(y);
      res.phi = std::move(y);
      res.residual = r;
      res.iterations = it;
      res.converged = true;
      return res;
    }
    if (!prev.empty() && l1_diff(y, prev) < tol) {
      DVec avg(x.size());
      for (size_t i = 0; i < x.size(); ++i) avg[i] = 0.5 * (x[i] + y[i]);
      normalize_l1(avg);
      DVec check = A(avg);
      double ra = l1_diff(check, avg);
      res.phi = std::move(avg);
      res.residual = ra;
      res.iterations = it;
      res.converged = ra < 10.0 * tol;
      res.period2 = true;
      return res;
    }
    prev = std::move(x);
    x = std::move(y);
  }
  res.phi = std::move(x);
  res.residual = r;
  res.iterations = max_iter;
  res.converged = false;
  return res;
}

struct UniquenessReport {
  std::vector<EigenResult> runs;
  double max_pairwise = 0.0;  // l1 distance between run fixed points
  bool unique = false;
};

// Rerun the fixed-point search from a uniform start and several random
// starts. Distinct limits, or failure to settle, flag a non-unique
// stationary mass (conserved quantities split the chain into pieces).
template <typename ApplyFn>
UniquenessReport stationary_uniqueness(ApplyFn&& A, size_t n, int n_starts,
                                       uint64_t seed, double tol = 1e-11,
                                       int max_iter = 20000,
                                       double probe_tol = 1e-6) {
  UniquenessReport rep;
  for (int k = 0; k < n_starts; ++k) {
    DVec start(n, 1.0);
    if (k > 0) {
      CounterRng rng(seed, static_cast<uint64_t>(k));
      for (double& v : start) v = -std::log(rng.next_double() + 1e-300);
    }
    rep.runs.push_back(stationary_mass(A, start, tol, max_iter));
  }
  bool all_ok = true;
  for (const EigenResult& r : rep.runs) all_ok = all_ok && r.converged;
  for (size_t i = 0; i < rep.runs.size(); ++i)
    for (size_t j = i + 1; j < rep.runs.size(); ++j)
      rep.max_pairwise = std::max(
          rep.max_pairwise, l1_diff(rep.runs[i].phi, rep.runs[j].phi));
  rep.unique = all_ok && rep.max_pairwise <= probe_tol;
  return rep;
}

// Modulus of the largest non-stationary eigenvalue, via iteration on the
// zero-sum complement of the fixed point. Column-stochastic maps preserve
// coordinate sums, so the deflation only needs the start to have sum zero;
// it is re-projected each step to tame round-off.
template <typename ApplyFn>
double subdominant_modulus(ApplyFn&& A, const DVec& phi, uint64_t seed,
                           int iters = 400) {
  CounterRng rng(seed, 77);
  DVec x(phi.size());
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  double s = vec_sum(x);
  for (size_t i = 0; i < x.size(); ++i) x[i] -= phi[i] * s;
  double nx = l1_norm(x);
  for (double& v : x) v /= nx;
  double log_rate = 0.0;
  int counted = 0;
  for (int it = 0; it < iters; ++it) {
    DVec y = A(x);
    double sy = vec_sum(y);
    for (size_t i = 0; i < y.size(); ++i) y[i] -= phi[i] * sy;
    double ny = l1_norm(y);
    if (ny < 1e-280) return 0.0;
    if (it >= iters - iters / 3) {
      log_rate += std::log(ny);
      ++counted;
    }
    for (double& v : y) v /= ny;
    x = std::move(y);
  }
  return std::exp(log_rate / counted);
}

// --- inverse-speed moment of the stationary trace mass ----------------------

enum class TailVerdict { finite, infinite, inconclusive };

inline const char* tail_verdict_name(TailVerdict v) {
  switch (v) {
    case TailVerdict::finite: return "finite";
    case TailVerdict::infinite: return "infinite";
    default: return "inconclusive";
  }
}

struct SpeedTailReport {
  std::vector<double> shell;  // sum of phi/rho per dyadic speed shell
  TailVerdict verdict = TailVerdict::inconclusive;
  double last_ratio = 0.0;
  double total = 0.0;
};

// Probes whether the stationary boundary mass keeps a finite 1/speed
// moment. Dyadic speed shells [rho_max 2^-(j+1), rho_max 2^-j) collect
// phi/rho; geometric decay of the deepest shells means the moment closes,
// sustained growth or a plateau means low speeds dominate and it does not.
inline SpeedTailReport inverse_speed_moment_probe(const TraceGrid& tg,
                                                 const DVec& phi,
                                                 int max_shells = 40) {
  SpeedTailReport rep;
  const SpeedPartition& sp = tg.speed();
  double rho_max = sp.edges.back();
  rep.shell.assign(static_cast<size_t>(max_shells), 0.0);
  for (int i = 0; i < tg.n_out(); ++i) {
    int s = tg.out_cell(i).s;
    double rho = sp.rep[static_cast<size_t>(s)];
    double t = phi[static_cast<size_t>(i)] / rho;
    rep.total += t;
    // Spread over the dyadic shells the speed cell overlaps; assigning the
    // whole cell to its representative's shell skews octaves on partitions
    // coarser than the shells.
    double a = sp.edges[static_cast<size_t>(s)];
    double b = sp.edges[static_cast<size_t>(s) + 1];
    if (!(b > a)) {
      int j = rho > 0.0
                  ? static_cast<int>(std::floor(std::log2(rho_max / rho)))
                  : max_shells - 1;
      j = std::min(std::max(j, 0), max_shells - 1);
      rep.shell[static_cast<size_t>(j)] += t;
      continue;
    }
    for (int j = 0; j < max_shells; ++j) {
      double hi = rho_max * std::pow(2.0, -j);
      double lo = j == max_shells - 1 ? 0.0 : 0.5 * hi;
      double ov = std::min(b, hi) - std::max(a, lo);
      if (ov > 0.0) rep.shell[static_cast<size_t>(j)] += t * ov / (b - a);
    }
  }
  // Deepest shells holding real mass decide the verdict. A shell sliced
  // through by the partition floor would distort the trend, so only shells
  // whose full dyadic range lies on the grid count.
  int complete = max_shells - 1;
  if (sp.edges.front() > 0.0)
    complete = static_cast<int>(
                   std::floor(std::log2(rho_max / sp.edges.front()))) -
               1;
  int last = -1;
  for (int j = 0; j <= std::min(complete, max_shells - 1); ++j)
    if (rep.shell[static_cast<size_t>(j)] > 1e-14 * rep.total) last = j;
  // Only the deepest shells carry the low-speed trend; a wider window can
  // straddle the bulk peak of the profile and read its rise as growth.
  std::vector<double> tail;
  for (int j = std::max(0, last - 2); j <= last; ++j)
    tail.push_back(rep.shell[static_cast<size_t>(j)]);
  if (tail.size() < 3) {
    rep.verdict = TailVerdict::finite;  // no low-speed tail on the grid
    return rep;
  }
  bool decay = true, grow = true;
  for (size_t k = 1; k < tail.size(); ++k) {
    double ratio = tail[k] / tail[k - 1];
    rep.last_ratio = ratio;
    decay = decay && ratio <= 0.75;
    grow = grow && ratio >= 0.95;
  }
  if (decay)
    rep.verdict = TailVerdict::finite;
  else if (grow)
    rep.verdict = TailVerdict::infinite;
  return rep;
}

// --- invariant phase density ------------------------------------------------

struct InvariantDensity {
  DVec phase;      // phase cell masses, l1 normalized
  DVec trace_out;  // stationary outgoing mass
  DVec trace_in;   // its image under the wall law
  double raw_mass = 0.0;  // chord-time mass before normalization
};

// Lift a stationary boundary mass to the interior: push it through the
// wall law, then spread each incoming cell along its chords weighted by
// time of flight.
inline InvariantDensity build_invariant_density(const TraceGrid& tg,
                                                const PhaseGrid& pg,
                                                const Domain& dom,
                                                const BoundaryOp& H,
                                                const DVec& phi) {
  InvariantDensity inv;
  inv.trace_out = phi;
  inv.trace_in = H.apply(phi);
  inv.phase = apply_chord_density(tg, pg, dom, inv.trace_in, 0.0);
  inv.raw_mass = vec_sum(inv.phase);
  normalize_l1(inv.phase);
  return inv;
}

// --- resolvent of the transport generator -----------------------------------

struct ResolventResult {
  DVec phase;
  int terms = 0;
  double tail_mass = 0.0;  // trace mass still circulating at cutoff
};

// (lambda - T)^-1 applied to a nonnegative phase mass: interior free
// flight plus the wall-law series. The flight pieces reuse the chords of
// flight_op, so lambda * result carries exactly the input mass minus the
// series tail.
inline ResolventResult resolvent_apply(const TraceGrid& tg,
                                       const PhaseGrid& pg, const Domain& dom,
                                       const BoundaryOp& H,
                                       const SparseOp& flight_op,
                                       const DVec& f, double lambda,
                                       double series_tol = 1e-12,
                                       int max_terms = 200000) {
  if (lambda <= 0.0)
    throw ConfigError("resolvent needs a positive rate parameter");
  ResolventResult res;
  res.phase = apply_interior_flight(pg, dom, f, lambda);
  DVec t = apply_exit_map(pg, tg, dom, f, lambda);
  DVec acc(static_cast<size_t>(tg.n_in()), 0.0);
  int n = 0;
  while (l1_norm(t) >= series_tol && n < max_terms) {
    DVec h = H.apply(t);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += h[i];
    t = flight_op.apply(h);
    ++n;
  }
  res.terms = n;
  res.tail_mass = l1_norm(t);
  DVec wall_part = apply_chord_density(tg, pg, dom, acc, lambda);
  for (size_t i = 0; i < res.phase.size(); ++i) res.phase[i] += wall_part[i];
  return res;
}

// Resolvent applied to a chord-spread density given by its incoming trace
// influx u (the representation the invariant density is built from). On
// shared chords the free-flight pieces reduce to differences of the
// lambda = 0 and damped operators, so for a stationary influx the identity
// lambda R(lambda) psi = psi holds to round-off rather than to grid
// resolution. flight0 and flight must come from assemble_flight_op at 0
// and at lambda on the same grid.
inline ResolventResult resolvent_apply_influx(
    const TraceGrid& tg, const PhaseGrid& pg, const Domain& dom,
    const BoundaryOp& H, const SparseOp& flight0, const SparseOp& flight,
    const DVec& u, double lambda, double series_tol = 1e-12,
    int max_terms = 200000) {
  if (lambda <= 0.0)
    throw ConfigError("resolvent needs a positive rate parameter");
  ResolventResult res;
  // R_lambda (Xi_0 u) = (Xi_0 u - Xi_lambda u) / lambda on shared chords.
  DVec psi0 = apply_chord_density(tg, pg, dom, u, 0.0);
  DVec psil = apply_chord_density(tg, pg, dom, u, lambda);
  res.phase.resize(psi0.size());
  for (size_t i = 0; i < psi0.size(); ++i)
    res.phase[i] = (psi0[i] - psil[i]) / lambda;
  // G_lambda (Xi_0 u) = (M_0 u - M_lambda u) / lambda on shared chords.
  DVec t0 = flight0.apply(u);
  DVec tl = flight.apply(u);
  DVec t(t0.size());
  for (size_t i = 0; i < t.size(); ++i) t[i] = (t0[i] - tl[i]) / lambda;
  DVec acc(static_cast<size_t>(tg.n_in()), 0.0);
  int n = 0;
  while (l1_norm(t) >= series_tol && n < max_terms) {
    DVec h = H.apply(t);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += h[i];
    t = flight.apply(h);
    ++n;
  }
  res.terms = n;
  res.tail_mass = l1_norm(t);
  DVec wall_part = apply_chord_density(tg, pg, dom, acc, lambda);
  for (size_t i = 0; i < res.phase.size(); ++i) res.phase[i] += wall_part[i];
  return res;
}

}  // namespace kinetrace
