#pragma once

#include <memory>
#include <string>
#include <utility>

#include "kinetrace/boundary.hpp"
#include "kinetrace/config.hpp"
#include "kinetrace/domain.hpp"
#include "kinetrace/errors.hpp"
#include "kinetrace/grids.hpp"
#include "kinetrace/pdmp.hpp"
#include "kinetrace/vmeasure.hpp"

namespace kinetrace {

inline Domain build_domain(const DomainConfig& d) {
  if (d.kind == "disk") return Domain::disk(d.radius);
  if (d.kind == "ball") return Domain::ball(d.radius);
  if (d.kind == "ellipse") return Domain::ellipse(d.a, d.b);
  if (d.kind == "annulus") return Domain::annulus(d.r_inner, d.r_outer);
  return Domain::star(d.star_base, d.star_cos, d.star_sin);
}

inline VelocityMeasure build_measure(const MeasureConfig& m) {
  if (m.kind == "lebesgue")
    return VelocityMeasure::lebesgue_annulus(m.dim, m.rho_min, m.rho_max);
  if (m.kind == "single_speed")
    return VelocityMeasure::single_speed(m.dim, m.rho, m.mass);
  return VelocityMeasure::multigroup(m.dim, m.speeds, m.masses);
}

inline AlphaField build_alpha(const AlphaConfig& a) {
  if (a.kind == "constant") return AlphaField::constant(a.value);
  if (a.kind == "two_patch") return AlphaField::two_patch(a.v0, a.v1, a.split);
  return AlphaField::tabulated(a.values);
}

inline std::shared_ptr<const DiffuseKernel> build_kernel(
    const KernelConfig& k, const VelocityMeasure& m) {
  if (k.kind == "maxwell")
    return std::make_shared<MaxwellKernel>(m, k.theta);
  if (k.kind == "heavy")
    return std::make_shared<HeavyLowSpeedKernel>(m, k.p, k.q, k.cutoff);
  return nullptr;
}

// A fully constructed problem instance: domain, velocity measure, wall law,
// plus factories for the discrete grids tied to the same config.
struct Scenario {
  ScenarioConfig cfg;
  Domain dom;
  VelocityMeasure m;
  PartlyDiffuseBoundary bc;

  static Scenario build(const ScenarioConfig& cfg) {
    Domain dom = build_domain(cfg.domain);
    int dom_dim = (cfg.domain.kind == "ball") ? 3 : 2;
    if (cfg.measure.dim != dom_dim)
      throw ConfigError("config: measure.dim does not match the domain");
    VelocityMeasure m = build_measure(cfg.measure);
    PartlyDiffuseBoundary bc;
    bc.alpha = build_alpha(cfg.boundary.alpha);
    bc.reflection.kind = cfg.boundary.reflection == "bounce_back"
                             ? ReflectionKind::bounce_back
                             : ReflectionKind::specular;
    bc.kernel = build_kernel(cfg.boundary.kernel, m);
    if (!bc.kernel && bc.alpha.inf() < 1.0)
      throw ConfigError(
          "config: boundary.kernel is 'none' but alpha < 1 somewhere; a "
          "diffuse fraction needs a kernel");
    return Scenario{cfg, std::move(dom), std::move(m), std::move(bc)};
  }

  SpeedPartition speeds(int refine = 1) const {
    return build_speed_partition(m, cfg.grids.speed_cells * refine,
                                 cfg.grids.log_speeds, cfg.grids.speed_floor);
  }

  DirectionPartition directions(int refine = 1) const {
    if (m.dim() == 2)
      return build_direction_partition(2, cfg.grids.angle_cells * refine);
    int polar = cfg.grids.polar_cells > 0 ? cfg.grids.polar_cells
                                          : cfg.grids.angle_cells / 2;
    return build_direction_partition(3, cfg.grids.angle_cells * refine,
                                     polar * refine);
  }

  BoundaryMesh mesh(int refine = 1) const {
    int nb = cfg.grids.boundary_cells * refine;
    if (m.dim() == 2) return BoundaryMesh::curve(dom, nb);
    return BoundaryMesh::sphere(dom, nb, 2 * nb);
  }

  TraceGrid trace_grid(int refine = 1) const {
    return TraceGrid(mesh(refine), speeds(refine), directions(refine),
                     cfg.grids.q_sub);
  }

  PhaseGrid phase_grid(int refine = 1) const {
    return PhaseGrid(dom, cfg.grids.phase_axis * refine, speeds(refine),
                     directions(refine), cfg.grids.phase_subgrid * refine);
  }

  // Coarse grid the particle run is scored on. Must tile the spectral grid
  // exactly so the invariant density can be aggregated without rebinning
  // error.
  PhaseGrid observable_grid() const {
    const ObservableConfig& o = cfg.grids.observable;
    if (cfg.grids.phase_axis % o.phase_axis != 0 ||
        cfg.grids.speed_cells % o.speed_cells != 0 ||
        cfg.grids.angle_cells % o.angle_cells != 0)
      throw ConfigError(
          "config: grids.observable must divide the spectral grid counts");
    SpeedPartition sp =
        build_speed_partition(m, o.speed_cells, cfg.grids.log_speeds,
                              cfg.grids.speed_floor);
    DirectionPartition dp = build_direction_partition(m.dim(), o.angle_cells);
    return PhaseGrid(dom, o.phase_axis, sp, dp, cfg.grids.phase_subgrid);
  }

  PdmpModel model() const {
    PdmpModel mod;
    mod.dom = &dom;
    mod.bc = &bc;
    mod.seed = cfg.run.seed;
    mod.rho_freeze = cfg.run.rho_freeze;
    return mod;
  }
};

// Fold spectral phase-cell masses onto the observable grid. With the
// exact-coarsening layout checked in observable_grid() every fine cell
// lands wholly inside one coarse cell, so this is a pure regrouping.
inline DVec aggregate_to_observable(const PhaseGrid& fine,
                                    const PhaseGrid& obs, const DVec& mass) {
  std::vector<int> speed_map(static_cast<size_t>(fine.n_speed()));
  for (int s = 0; s < fine.n_speed(); ++s)
    speed_map[static_cast<size_t>(s)] = obs.speed().locate(fine.speed().rep[static_cast<size_t>(s)]);
  std::vector<int> dir_map(static_cast<size_t>(fine.n_dir()));
  for (int o = 0; o < fine.n_dir(); ++o)
    dir_map[static_cast<size_t>(o)] =
        obs.direction().locate(fine.direction().rep[static_cast<size_t>(o)]);
  DVec out(static_cast<size_t>(obs.n_cells()), 0.0);
  for (int sp : fine.occupied()) {
    Vec c = fine.box_center(sp);
    int osp = obs.locate_space_clamped(c);
    if (osp < 0) continue;  // sliver cut differently by the coarse clip
    for (int s = 0; s < fine.n_speed(); ++s) {
      int os = speed_map[static_cast<size_t>(s)];
      if (os < 0) continue;
      for (int o = 0; o < fine.n_dir(); ++o) {
        double v = mass[static_cast<size_t>(fine.cell_index(sp, s, o))];
        out[static_cast<size_t>(obs.cell_index(osp, os, dir_map[static_cast<size_t>(o)]))] += v;
      }
    }
  }
  return out;
}

}  // namespace kinetrace
