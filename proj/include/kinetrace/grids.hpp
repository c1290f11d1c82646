#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "kinetrace/domain.hpp"
#include "kinetrace/errors.hpp"
#include "kinetrace/geometry.hpp"
#include "kinetrace/vmeasure.hpp"

namespace kinetrace {

// --- boundary mesh ---------------------------------------------------------

struct BoundaryCell {
  Vec x_rep;       // representative point on the boundary
  Vec n;           // outward normal at the representative
  double weight;   // arc length (d=2) or surface area (ball)
  double u;        // normalized boundary parameter of the representative
};

// Partition of the boundary into cells of equal parameter extent. Curves
// use arc length (the annulus splits its loops so no cell straddles them);
// the sphere uses uniform cos(theta) bands times azimuth sectors, which
// have equal areas.
class BoundaryMesh {
 public:
  static BoundaryMesh curve(const Domain& dom, int n_cells) {
    if (dom.dim() != 2)
      throw ConfigError("boundary mesh: curve() needs a d=2 domain");
    if (n_cells < 2) throw ConfigError("boundary mesh: need >= 2 cells");
    BoundaryMesh m;
    m.dom_ = &dom;
    m.total_ = dom.perimeter();
    if (dom.kind() == DomainKind::annulus) {
      double lout = 2.0 * M_PI * dom.radius_outer();
      double lin = m.total_ - lout;
      m.n_outer_ = std::max(
          1, static_cast<int>(std::lround(n_cells * lout / m.total_)));
      if (m.n_outer_ >= n_cells) m.n_outer_ = n_cells - 1;
      m.h_outer_ = lout / m.n_outer_;
      m.h_inner_ = lin / (n_cells - m.n_outer_);
      m.split_arc_ = lout;
    } else {
      m.n_outer_ = n_cells;
      m.h_outer_ = m.total_ / n_cells;
      m.h_inner_ = 0.0;
      m.split_arc_ = m.total_;
    }
    for (int i = 0; i < n_cells; ++i) {
      double s = m.arc_of_cell(i, 0.5);
      BoundaryCell c;
      c.x_rep = dom.boundary_point(s);
      c.n = dom.normal(c.x_rep);
      c.weight = i < m.n_outer_ ? m.h_outer_ : m.h_inner_;
      c.u = s / m.total_;
      m.cells_.push_back(c);
    }
    return m;
  }

  static BoundaryMesh sphere(const Domain& dom, int n_polar, int n_azimuth) {
    if (dom.kind() != DomainKind::ball)
      throw ConfigError("boundary mesh: sphere() needs a ball domain");
    if (n_polar < 2 || n_azimuth < 2)
      throw ConfigError("boundary mesh: need >= 2 bands and sectors");
    BoundaryMesh m;
    m.dom_ = &dom;
    m.n_polar_ = n_polar;
    m.n_azimuth_ = n_azimuth;
    double R = dom.radius_outer();
    double hc = 2.0 / n_polar, hphi = 2.0 * M_PI / n_azimuth;
    for (int b = 0; b < n_polar; ++b) {
      double c = -1.0 + (b + 0.5) * hc;
      double s = std::sqrt(std::max(0.0, 1.0 - c * c));
      for (int j = 0; j < n_azimuth; ++j) {
        double phi = (j + 0.5) * hphi;
        BoundaryCell cell;
        cell.x_rep = Vec(R * s * std::cos(phi), R * s * std::sin(phi), R * c);
        cell.n = dom.normal(cell.x_rep);
        cell.weight = R * R * hc * hphi;
        cell.u = phi / (2.0 * M_PI);
        m.cells_.push_back(cell);
      }
    }
    return m;
  }

  int size() const { return static_cast<int>(cells_.size()); }
  const BoundaryCell& cell(int i) const {
    return cells_[static_cast<size_t>(i)];
  }
  const Domain& domain() const { return *dom_; }

  int locate(const Vec& x) const {
    if (dom_->dim() == 2) {
      double s = dom_->boundary_arc(x);
      int i;
      if (s < split_arc_) {
        i = static_cast<int>(s / h_outer_);
        i = std::clamp(i, 0, n_outer_ - 1);
      } else {
        i = n_outer_ + static_cast<int>((s - split_arc_) / h_inner_);
        i = std::clamp(i, n_outer_, size() - 1);
      }
      return i;
    }
    double R = dom_->radius_outer();
    double c = std::clamp(x[2] / R, -1.0, 1.0);
    int band = std::clamp(static_cast<int>((c + 1.0) * 0.5 * n_polar_), 0,
                          n_polar_ - 1);
    double phi = std::atan2(x[1], x[0]);
    if (phi < 0.0) phi += 2.0 * M_PI;
    int sec = std::clamp(
        static_cast<int>(phi / (2.0 * M_PI) * n_azimuth_), 0, n_azimuth_ - 1);
    return band * n_azimuth_ + sec;
  }

  // Parameter-uniform sub-samples inside a cell: q points along the arc
  // (d=2) or q x q points over the (cos theta, phi) rectangle (sphere).
  std::vector<Vec> sub_points(int i, int q) const {
    std::vector<Vec> pts;
    if (dom_->dim() == 2) {
      for (int k = 0; k < q; ++k) {
        double s = arc_of_cell(i, (k + 0.5) / q);
        pts.push_back(dom_->boundary_point(s));
      }
      return pts;
    }
    double R = dom_->radius_outer();
    int band = i / n_azimuth_, sec = i % n_azimuth_;
    double hc = 2.0 / n_polar_, hphi = 2.0 * M_PI / n_azimuth_;
    for (int a = 0; a < q; ++a) {
      double c = -1.0 + (band + (a + 0.5) / q) * hc;
      double s = std::sqrt(std::max(0.0, 1.0 - c * c));
      for (int b = 0; b < q; ++b) {
        double phi = (sec + (b + 0.5) / q) * hphi;
        pts.push_back(
            Vec(R * s * std::cos(phi), R * s * std::sin(phi), R * c));
      }
    }
    return pts;
  }

  double total_weight() const {
    double s = 0.0;
    for (const BoundaryCell& c : cells_) s += c.weight;
    return s;
  }

 private:
  double arc_of_cell(int i, double frac) const {
    if (i < n_outer_) return (i + frac) * h_outer_;
    return split_arc_ + (i - n_outer_ + frac) * h_inner_;
  }

  const Domain* dom_ = nullptr;
  std::vector<BoundaryCell> cells_;
  // curve parameters
  double total_ = 0.0, split_arc_ = 0.0, h_outer_ = 0.0, h_inner_ = 0.0;
  int n_outer_ = 0;
  // sphere parameters
  int n_polar_ = 0, n_azimuth_ = 0;
};

// --- trace grid ------------------------------------------------------------

struct TraceCellRef {
  int b = 0;  // boundary cell
  int s = 0;  // speed cell
  int o = 0;  // direction cell
};

// Product cells (boundary x speed x direction) classified against the cell
// normal into incoming and outgoing families; cells whose representative
// direction is grazing belong to neither and deposits into them are
// redirected to the angularly nearest valid direction cell.
class TraceGrid {
 public:
  TraceGrid(BoundaryMesh mesh, SpeedPartition speed, DirectionPartition dir,
            int q_sub = 8, double graze_cut = kGrazeTol)
      : mesh_(std::move(mesh)),
        speed_(std::move(speed)),
        dir_(std::move(dir)),
        q_sub_(q_sub),
        graze_cut_(graze_cut) {
    const int B = mesh_.size();
    const int NS = static_cast<int>(speed_.rep.size());
    const int NO = dir_.size();
    in_id_.assign(static_cast<size_t>(B) * NS * NO, -1);
    out_id_.assign(static_cast<size_t>(B) * NS * NO, -1);
    redirect_in_.assign(static_cast<size_t>(B) * NO, -1);
    redirect_out_.assign(static_cast<size_t>(B) * NO, -1);
    for (int b = 0; b < B; ++b) {
      const Vec& n = mesh_.cell(b).n;
      for (int o = 0; o < NO; ++o) {
        double c = dot(dir_.rep[static_cast<size_t>(o)], n);
        for (int s = 0; s < NS; ++s) {
          size_t flat = flat_index(b, s, o);
          if (c < -graze_cut_) {
            in_id_[flat] = static_cast<int32_t>(cells_in_.size());
            cells_in_.push_back({b, s, o});
          } else if (c > graze_cut_) {
            out_id_[flat] = static_cast<int32_t>(cells_out_.size());
            cells_out_.push_back({b, s, o});
          }
        }
      }
      // Redirect tables: nearest direction cell on the wanted side.
      for (int o = 0; o < NO; ++o) {
        redirect_in_[static_cast<size_t>(b) * NO + o] =
            nearest_side(b, o, true);
        redirect_out_[static_cast<size_t>(b) * NO + o] =
            nearest_side(b, o, false);
      }
    }
    mu_in_.reserve(cells_in_.size());
    for (const TraceCellRef& c : cells_in_) mu_in_.push_back(cell_mu(c));
    mu_out_.reserve(cells_out_.size());
    for (const TraceCellRef& c : cells_out_) mu_out_.push_back(cell_mu(c));
  }

  const BoundaryMesh& mesh() const { return mesh_; }
  const SpeedPartition& speed() const { return speed_; }
  const DirectionPartition& direction() const { return dir_; }
  int q_sub() const { return q_sub_; }

  int n_in() const { return static_cast<int>(cells_in_.size()); }
  int n_out() const { return static_cast<int>(cells_out_.size()); }
  const TraceCellRef& in_cell(int i) const {
    return cells_in_[static_cast<size_t>(i)];
  }
  const TraceCellRef& out_cell(int i) const {
    return cells_out_[static_cast<size_t>(i)];
  }

  int in_index(int b, int s, int o) const {
    return in_id_[flat_index(b, s, o)];
  }
  int out_index(int b, int s, int o) const {
    return out_id_[flat_index(b, s, o)];
  }

  Vec v_rep(const TraceCellRef& c) const {
    Vec v = dir_.rep[static_cast<size_t>(c.o)] *
            speed_.rep[static_cast<size_t>(c.s)];
    v.d = dir_.dim;
    return v;
  }

  // mu weight: |v.n| * velocity cell mass * boundary cell weight.
  double mu_in(int i) const { return mu_in_[static_cast<size_t>(i)]; }
  double mu_out(int i) const { return mu_out_[static_cast<size_t>(i)]; }
  double total_mu_in() const {
    double s = 0.0;
    for (double w : mu_in_) s += w;
    return s;
  }
  double total_mu_out() const {
    double s = 0.0;
    for (double w : mu_out_) s += w;
    return s;
  }

  // Deposit lookup at a boundary point: the (redirected) incoming or
  // outgoing compressed index for velocity cell (s, o), or -1 when the
  // speed falls outside the partition.
  int deposit_out(const Vec& x_exit, int s, int o) const {
    int b = mesh_.locate(x_exit);
    int oo = redirect_out_[static_cast<size_t>(b) * dir_.size() + o];
    return out_index(b, s, oo);
  }
  int deposit_in(const Vec& x_enter, int s, int o) const {
    int b = mesh_.locate(x_enter);
    int oo = redirect_in_[static_cast<size_t>(b) * dir_.size() + o];
    return in_index(b, s, oo);
  }
  int deposit_out(const Vec& x_exit, const Vec& v) const {
    int s = speed_.locate(norm(v));
    if (s < 0) return -1;
    return deposit_out(x_exit, s, dir_.locate(normalized(v)));
  }
  int deposit_in(const Vec& x_enter, const Vec& v) const {
    int s = speed_.locate(norm(v));
    if (s < 0) return -1;
    return deposit_in(x_enter, s, dir_.locate(normalized(v)));
  }

  // Direction cell redirected within the same boundary cell (no lookup).
  int redirect_dir_out(int b, int o) const {
    return redirect_out_[static_cast<size_t>(b) * dir_.size() + o];
  }
  int redirect_dir_in(int b, int o) const {
    return redirect_in_[static_cast<size_t>(b) * dir_.size() + o];
  }

 private:
  size_t flat_index(int b, int s, int o) const {
    return (static_cast<size_t>(b) * speed_.rep.size() +
            static_cast<size_t>(s)) *
               static_cast<size_t>(dir_.size()) +
           static_cast<size_t>(o);
  }

  double cell_mu(const TraceCellRef& c) const {
    const BoundaryCell& bc = mesh_.cell(c.b);
    double vmass = speed_.mass[static_cast<size_t>(c.s)] *
                   dir_.sigma_weight[static_cast<size_t>(c.o)] /
                   sphere_area(dir_.dim);
    return mu_weight(bc.n, v_rep({c.b, c.s, c.o}), vmass) * bc.weight;
  }

  int nearest_side(int b, int o, bool incoming) const {
    const Vec& n = mesh_.cell(b).n;
    double c = dot(dir_.rep[static_cast<size_t>(o)], n);
    if (incoming ? (c < -graze_cut_) : (c > graze_cut_)) return o;
    int best = -1;
    double best_ang = 1e300;
    for (int oo = 0; oo < dir_.size(); ++oo) {
      double cc = dot(dir_.rep[static_cast<size_t>(oo)], n);
      if (incoming ? (cc >= -graze_cut_) : (cc <= graze_cut_)) continue;
      double ang = std::acos(std::clamp(
          dot(dir_.rep[static_cast<size_t>(o)],
              dir_.rep[static_cast<size_t>(oo)]),
          -1.0, 1.0));
      if (ang < best_ang) {
        best_ang = ang;
        best = oo;
      }
    }
    return best;
  }

  BoundaryMesh mesh_;
  SpeedPartition speed_;
  DirectionPartition dir_;
  int q_sub_;
  double graze_cut_;
  std::vector<TraceCellRef> cells_in_, cells_out_;
  std::vector<int32_t> in_id_, out_id_;
  std::vector<int32_t> redirect_in_, redirect_out_;
  std::vector<double> mu_in_, mu_out_;
};

// --- phase-space grid ------------------------------------------------------

// Cartesian boxes over the domain bounding box times the velocity cell
// partition. Box volumes are clipped to the domain by midpoint counting on
// a subgrid; velocity cell masses come from the polar factorization.
class PhaseGrid {
 public:
  PhaseGrid(const Domain& dom, int n_axis, SpeedPartition speed,
            DirectionPartition dir, int subgrid = 16)
      : dom_(&dom),
        n_axis_(n_axis),
        subgrid_(subgrid),
        speed_(std::move(speed)),
        dir_(std::move(dir)) {
    if (n_axis < 1) throw ConfigError("phase grid: need >= 1 box per axis");
    dom.bounding_box(lo_, hi_);
    d_ = dom.dim();
    for (int i = 0; i < d_; ++i)
      h_[static_cast<size_t>(i)] = (hi_[i] - lo_[i]) / n_axis_;
    n_space_ = 1;
    for (int i = 0; i < d_; ++i) n_space_ *= n_axis_;
    vol_.assign(static_cast<size_t>(n_space_), 0.0);
    double full = 1.0;
    for (int i = 0; i < d_; ++i) full *= h_[static_cast<size_t>(i)];
    for (int sp = 0; sp < n_space_; ++sp) {
      long in = 0, tot = 0;
      for_subcenters_raw(sp, subgrid, [&](const Vec& c) {
        ++tot;
        if (dom.inside(c)) ++in;
      });
      vol_[static_cast<size_t>(sp)] =
          full * static_cast<double>(in) / static_cast<double>(tot);
      if (vol_[static_cast<size_t>(sp)] > 0.0) occupied_.push_back(sp);
    }
  }

  const Domain& domain() const { return *dom_; }
  const SpeedPartition& speed() const { return speed_; }
  const DirectionPartition& direction() const { return dir_; }

  int n_space() const { return n_space_; }
  int n_speed() const { return static_cast<int>(speed_.rep.size()); }
  int n_dir() const { return dir_.size(); }
  long n_cells() const {
    return static_cast<long>(n_space_) * n_speed() * n_dir();
  }
  const std::vector<int>& occupied() const { return occupied_; }

  double min_box_side() const {
    double m = 1e300;
    for (int i = 0; i < d_; ++i) m = std::min(m, h_[static_cast<size_t>(i)]);
    return m;
  }

  int dim() const { return d_; }
  double box_side(int axis) const { return h_[static_cast<size_t>(axis)]; }
  double box_lo(int axis) const { return lo_[axis]; }

  int subgrid() const { return subgrid_; }

  int locate_space(const Vec& x) const {
    int idx = 0;
    for (int i = 0; i < d_; ++i) {
      double t = (x[i] - lo_[i]) / h_[static_cast<size_t>(i)];
      int k = static_cast<int>(t);
      if (t < 0.0 || k >= n_axis_) return -1;
      idx = idx * n_axis_ + k;
    }
    return idx;
  }

  // Like locate_space but tolerant of round-off at the bounding box edges:
  // points within 1e-9 cells of the box are clamped inside.
  int locate_space_clamped(const Vec& x) const {
    int idx = 0;
    for (int i = 0; i < d_; ++i) {
      double t = (x[i] - lo_[i]) / h_[static_cast<size_t>(i)];
      if (t < -1e-9 || t > n_axis_ + 1e-9) return -1;
      int k = std::clamp(static_cast<int>(t), 0, n_axis_ - 1);
      idx = idx * n_axis_ + k;
    }
    return idx;
  }

  long cell_index(int space, int s, int o) const {
    return (static_cast<long>(space) * n_speed() + s) * n_dir() + o;
  }

  long locate(const Vec& x, const Vec& v) const {
    int sp = locate_space(x);
    if (sp < 0) return -1;
    int s = speed_.locate(norm(v));
    if (s < 0) return -1;
    int o = dir_.locate(normalized(v));
    return cell_index(sp, s, o);
  }

  double box_volume(int space) const {
    return vol_[static_cast<size_t>(space)];
  }
  double total_volume() const {
    double s = 0.0;
    for (double v : vol_) s += v;
    return s;
  }
  double velocity_cell_mass(int s, int o) const {
    return speed_.mass[static_cast<size_t>(s)] *
           dir_.sigma_weight[static_cast<size_t>(o)] / sphere_area(dir_.dim);
  }
  double cell_measure(int space, int s, int o) const {
    return box_volume(space) * velocity_cell_mass(s, o);
  }

  // Midpoint sub-centers of a spatial box at resolution q per axis,
  // restricted to the domain; the weight of each yielded point is the full
  // box volume divided by q^d.
  template <typename F>
  void for_subcenters(int space, int q, F&& fn) const {
    for_subcenters_raw(space, q, [&](const Vec& c) {
      if (dom_->inside(c)) fn(c);
    });
  }

  double subcenter_weight(int q) const {
    double full = 1.0;
    for (int i = 0; i < d_; ++i) full *= h_[static_cast<size_t>(i)];
    double n = 1.0;
    for (int i = 0; i < d_; ++i) n *= q;
    return full / n;
  }

  Vec box_center(int space) const {
    Vec c = zero_vec(d_);
    int rem = space;
    for (int i = d_ - 1; i >= 0; --i) {
      int k = rem % n_axis_;
      rem /= n_axis_;
      c[i] = lo_[i] + (k + 0.5) * h_[static_cast<size_t>(i)];
    }
    return c;
  }

  Vec sample_in_box(int space, CounterRng& rng) const {
    Vec c = zero_vec(d_);
    int rem = space;
    for (int i = d_ - 1; i >= 0; --i) {
      int k = rem % n_axis_;
      rem /= n_axis_;
      double a = lo_[i] + k * h_[static_cast<size_t>(i)];
      c[i] = a + rng.next_double() * h_[static_cast<size_t>(i)];
    }
    return c;
  }

 private:
  template <typename F>
  void for_subcenters_raw(int space, int q, F&& fn) const {
    // Decode the box's per-axis indices.
    int idx[3] = {0, 0, 0};
    int rem = space;
    for (int i = d_ - 1; i >= 0; --i) {
      idx[i] = rem % n_axis_;
      rem /= n_axis_;
    }
    if (d_ == 2) {
      for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) {
          Vec c(lo_[0] + (idx[0] + (a + 0.5) / q) * h_[0],
                lo_[1] + (idx[1] + (b + 0.5) / q) * h_[1]);
          fn(c);
        }
      return;
    }
    for (int a = 0; a < q; ++a)
      for (int b = 0; b < q; ++b)
        for (int cix = 0; cix < q; ++cix) {
          Vec c(lo_[0] + (idx[0] + (a + 0.5) / q) * h_[0],
                lo_[1] + (idx[1] + (b + 0.5) / q) * h_[1],
                lo_[2] + (idx[2] + (cix + 0.5) / q) * h_[2]);
          fn(c);
        }
  }

  const Domain* dom_;
  int n_axis_, d_ = 2, n_space_ = 0, subgrid_ = 16;
  Vec lo_, hi_;
  std::array<double, 3> h_{0.0, 0.0, 0.0};
  SpeedPartition speed_;
  DirectionPartition dir_;
  std::vector<double> vol_;
  std::vector<int> occupied_;
};

}  // namespace kinetrace
