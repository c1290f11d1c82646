#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "kinetrace/boundary.hpp"
#include "kinetrace/domain.hpp"
#include "kinetrace/errors.hpp"
#include "kinetrace/grids.hpp"

namespace kinetrace {

using DVec = std::vector<double>;

inline double l1_norm(const DVec& x) {
  double s = 0.0;
  for (double v : x) s += std::abs(v);
  return s;
}

inline double vec_sum(const DVec& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s;
}

inline void normalize_l1(DVec& x) {
  double s = l1_norm(x);
  if (s <= 0.0) throw NumericalError("cannot normalize a zero vector");
  for (double& v : x) v /= s;
}

inline double max_abs_diff(const DVec& a, const DVec& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l1_diff(const DVec& a, const DVec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

// Column-major sparse matrix acting on cell-mass vectors. Columns are
// pushed in order during assembly; duplicate rows within a column are
// merged.
struct SparseOp {
  int n_rows = 0, n_cols = 0;
  std::vector<int64_t> col_ptr;
  std::vector<int32_t> row;
  std::vector<double> val;

  static SparseOp empty(int nr, int nc) {
    SparseOp a;
    a.n_rows = nr;
    a.n_cols = nc;
    a.col_ptr.assign(1, 0);
    return a;
  }

  void push_column(std::vector<std::pair<int, double>>& entries) {
    if (static_cast<int>(col_ptr.size()) - 1 >= n_cols)
      throw NumericalError("sparse assembly: too many columns");
    std::sort(entries.begin(), entries.end());
    int32_t last = -1;
    for (const auto& [r, v] : entries) {
      if (r == last) {
        val.back() += v;
      } else {
        row.push_back(static_cast<int32_t>(r));
        val.push_back(v);
        last = static_cast<int32_t>(r);
      }
    }
    col_ptr.push_back(static_cast<int64_t>(row.size()));
  }

  size_t nnz() const { return row.size(); }

  DVec apply(const DVec& x) const {
    DVec y(static_cast<size_t>(n_rows), 0.0);
    for (int j = 0; j < n_cols; ++j) {
      double xj = x[static_cast<size_t>(j)];
      if (xj == 0.0) continue;
      for (int64_t k = col_ptr[static_cast<size_t>(j)];
           k < col_ptr[static_cast<size_t>(j) + 1]; ++k)
        y[static_cast<size_t>(row[static_cast<size_t>(k)])] +=
            val[static_cast<size_t>(k)] * xj;
    }
    return y;
  }

  double column_sum(int j) const {
    double s = 0.0;
    for (int64_t k = col_ptr[static_cast<size_t>(j)];
         k < col_ptr[static_cast<size_t>(j) + 1]; ++k)
      s += val[static_cast<size_t>(k)];
    return s;
  }

  template <typename F>
  void for_entries(F&& fn) const {
    for (int j = 0; j < n_cols; ++j)
      for (int64_t k = col_ptr[static_cast<size_t>(j)];
           k < col_ptr[static_cast<size_t>(j) + 1]; ++k)
        fn(row[static_cast<size_t>(k)], j, val[static_cast<size_t>(k)]);
  }
};

// --- boundary operator -----------------------------------------------------

// Mass transport through the wall law: outgoing cell masses are split into
// a reflected part (weight alpha) and a diffuse part (weight 1 - alpha)
// spread over the incoming cells of the same boundary cell with the
// kernel's trace profile. Kernels that do not depend on the pre-collision
// velocity share one profile per boundary cell, which keeps the operator
// rank-one there; normalized kernels give exactly stochastic columns.
class BoundaryOp {
 public:
  BoundaryOp(const TraceGrid& tg, const PartlyDiffuseBoundary& bc)
      : tg_(&tg) {
    const BoundaryMesh& mesh = tg.mesh();
    const DirectionPartition& dir = tg.direction();
    n_rows_ = tg.n_in();
    n_cols_ = tg.n_out();
    alpha_col_.resize(static_cast<size_t>(n_cols_));
    refl_row_.resize(static_cast<size_t>(n_cols_));
    cell_of_col_.resize(static_cast<size_t>(n_cols_));
    bool need_diffuse = false;
    for (int j = 0; j < n_cols_; ++j) {
      const TraceCellRef& c = tg.out_cell(j);
      const BoundaryCell& b = mesh.cell(c.b);
      double a = bc.alpha.eval(b.u);
      alpha_col_[static_cast<size_t>(j)] = a;
      cell_of_col_[static_cast<size_t>(j)] = c.b;
      if (a < 1.0) need_diffuse = true;
      Vec v = tg.v_rep(c);
      Vec vr = bc.reflection.apply(b.n, v);
      int orr = tg.redirect_dir_in(c.b, dir.locate(normalized(vr)));
      int r = tg.in_index(c.b, c.s, orr);
      if (r < 0) throw NumericalError("boundary cell has no incoming cells");
      refl_row_[static_cast<size_t>(j)] = static_cast<int32_t>(r);
    }
    if (need_diffuse && !bc.kernel)
      throw ConfigError("wall law has a diffuse fraction but no kernel");
    if (!need_diffuse) return;

    per_column_ = bc.kernel->depends_on_outgoing();
    if (!per_column_) {
      profile_.resize(static_cast<size_t>(mesh.size()));
      profile_sum_.assign(static_cast<size_t>(mesh.size()), 0.0);
      for (int b = 0; b < mesh.size(); ++b)
        build_profile(tg, bc, b, Vec(), profile_[static_cast<size_t>(b)],
                      profile_sum_[static_cast<size_t>(b)]);
    } else {
      diffuse_full_ = SparseOp::empty(n_rows_, n_cols_);
      std::vector<std::pair<int, double>> col;
      for (int j = 0; j < n_cols_; ++j) {
        col.clear();
        const TraceCellRef& c = tg.out_cell(j);
        std::vector<std::pair<int32_t, double>> prof;
        double tot = 0.0;
        build_profile(tg, bc, c.b, tg.v_rep(c), prof, tot);
        for (const auto& [r, w] : prof) col.emplace_back(r, w);
        diffuse_full_.push_column(col);
        col_sum_full_.push_back(tot);
      }
    }
  }

  int n_rows() const { return n_rows_; }
  int n_cols() const { return n_cols_; }

  DVec apply(const DVec& x) const {
    DVec y(static_cast<size_t>(n_rows_), 0.0);
    // Reflected part.
    for (int j = 0; j < n_cols_; ++j) {
      double m = alpha_col_[static_cast<size_t>(j)] * x[static_cast<size_t>(j)];
      if (m != 0.0) y[static_cast<size_t>(refl_row_[static_cast<size_t>(j)])] += m;
    }
    if (per_column_) {
      for (int j = 0; j < n_cols_; ++j) {
        double m =
            (1.0 - alpha_col_[static_cast<size_t>(j)]) * x[static_cast<size_t>(j)];
        if (m == 0.0) continue;
        for (int64_t k = diffuse_full_.col_ptr[static_cast<size_t>(j)];
             k < diffuse_full_.col_ptr[static_cast<size_t>(j) + 1]; ++k)
          y[static_cast<size_t>(diffuse_full_.row[static_cast<size_t>(k)])] +=
              diffuse_full_.val[static_cast<size_t>(k)] * m;
      }
      return y;
    }
    if (profile_.empty()) return y;
    // Diffuse mass pooled per boundary cell, then spread by the profile.
    std::vector<double> pooled(profile_.size(), 0.0);
    for (int j = 0; j < n_cols_; ++j)
      pooled[static_cast<size_t>(cell_of_col_[static_cast<size_t>(j)])] +=
          (1.0 - alpha_col_[static_cast<size_t>(j)]) *
          x[static_cast<size_t>(j)];
    for (size_t b = 0; b < profile_.size(); ++b) {
      if (pooled[b] == 0.0) continue;
      for (const auto& [r, w] : profile_[b])
        y[static_cast<size_t>(r)] += w * pooled[b];
    }
    return y;
  }

  double column_sum(int j) const {
    double a = alpha_col_[static_cast<size_t>(j)];
    if (a >= 1.0) return a;
    double diffuse;
    if (per_column_)
      diffuse = col_sum_full_[static_cast<size_t>(j)];
    else
      diffuse = profile_sum_[static_cast<size_t>(
          cell_of_col_[static_cast<size_t>(j)])];
    return a + (1.0 - a) * diffuse;
  }

  size_t entry_count() const {
    size_t est = static_cast<size_t>(n_cols_);
    if (per_column_) {
      est += diffuse_full_.nnz();
    } else {
      for (int j = 0; j < n_cols_; ++j)
        if (alpha_col_[static_cast<size_t>(j)] < 1.0)
          est += profile_[static_cast<size_t>(
                              cell_of_col_[static_cast<size_t>(j)])]
                     .size();
    }
    return est;
  }

  SparseOp to_sparse(size_t max_entries = 50'000'000) const {
    if (entry_count() > max_entries)
      throw NumericalError("boundary operator export exceeds the entry cap");
    SparseOp a = SparseOp::empty(n_rows_, n_cols_);
    std::vector<std::pair<int, double>> col;
    for (int j = 0; j < n_cols_; ++j) {
      col.clear();
      double al = alpha_col_[static_cast<size_t>(j)];
      col.emplace_back(refl_row_[static_cast<size_t>(j)], al);
      if (al < 1.0) {
        if (per_column_) {
          for (int64_t k = diffuse_full_.col_ptr[static_cast<size_t>(j)];
               k < diffuse_full_.col_ptr[static_cast<size_t>(j) + 1]; ++k)
            col.emplace_back(
                diffuse_full_.row[static_cast<size_t>(k)],
                (1.0 - al) * diffuse_full_.val[static_cast<size_t>(k)]);
        } else {
          for (const auto& [r, w] : profile_[static_cast<size_t>(
                   cell_of_col_[static_cast<size_t>(j)])])
            col.emplace_back(r, (1.0 - al) * w);
        }
      }
      a.push_column(col);
    }
    return a;
  }

 private:
  void build_profile(const TraceGrid& tg, const PartlyDiffuseBoundary& bc,
                     int b, const Vec& v_out,
                     std::vector<std::pair<int32_t, double>>& prof,
                     double& total) const {
    const BoundaryCell& cell = tg.mesh().cell(b);
    KernelContext ctx{cell.x_rep, cell.n};
    const SpeedPartition& sp = tg.speed();
    const DirectionPartition& dp = tg.direction();
    prof.clear();
    total = 0.0;
    for (int s = 0; s < static_cast<int>(sp.rep.size()); ++s) {
      for (int o = 0; o < dp.size(); ++o) {
        int r = tg.in_index(b, s, o);
        if (r < 0) continue;
        Vec v = dp.rep[static_cast<size_t>(o)] * sp.rep[static_cast<size_t>(s)];
        v.d = dp.dim;
        double vmass = sp.mass[static_cast<size_t>(s)] *
                       dp.sigma_weight[static_cast<size_t>(o)] /
                       sphere_area(dp.dim);
        double w = bc.kernel->eval(ctx, v, v_out) *
                   std::abs(dot(v, cell.n)) * vmass;
        if (w > 0.0) {
          prof.emplace_back(static_cast<int32_t>(r), w);
          total += w;
        }
      }
    }
    if (bc.kernel->normalized()) {
      if (prof.empty())
        throw NumericalError("diffuse profile vanished on a boundary cell");
      for (auto& [r, w] : prof) w /= total;
      total = 1.0;
    }
  }

  const TraceGrid* tg_;
  int n_rows_ = 0, n_cols_ = 0;
  std::vector<double> alpha_col_;
  std::vector<int32_t> refl_row_;
  std::vector<int32_t> cell_of_col_;
  std::vector<std::vector<std::pair<int32_t, double>>> profile_;
  std::vector<double> profile_sum_;
  bool per_column_ = false;
  SparseOp diffuse_full_;
  std::vector<double> col_sum_full_;
};

// --- chord traversal helpers -----------------------------------------------

// Visit the sub-chords of one incoming trace cell: q parameter-uniform
// foot points, each flying the cell's representative velocity to the exit.
// fn(x0, v, tau, w) with w = 1/q. Every consumer of the same cell sees the
// same chords, which is what makes paired operators exactly consistent.
template <typename F>
void for_each_subchord(const TraceGrid& tg, const Domain& dom, int in_id,
                       F&& fn) {
  const TraceCellRef& c = tg.in_cell(in_id);
  Vec v = tg.v_rep(c);
  std::vector<Vec> pts = tg.mesh().sub_points(c.b, tg.q_sub());
  double w = 1.0 / static_cast<double>(pts.size());
  for (const Vec& x : pts) {
    double tau = dom.exit_time_fwd(x, v);
    fn(x, v, tau, w);
  }
}

// Visit interior foot points of one spatial box with normalized weights.
// Resolution escalates until at least one sub-center is inside the domain.
template <typename F>
void for_each_boxpoint(const PhaseGrid& pg, int space, F&& fn) {
  for (int q = pg.subgrid(); q <= 8 * pg.subgrid(); q *= 2) {
    int count = 0;
    pg.for_subcenters(space, q, [&](const Vec&) { ++count; });
    if (count == 0) continue;
    double w = 1.0 / static_cast<double>(count);
    pg.for_subcenters(space, q, [&](const Vec& c) { fn(c, w); });
    return;
  }
  throw NumericalError("phase box has no interior points");
}

// Deposit a chord's exponential density into spatial boxes:
// fn(space_id, weight) with weight = integral of exp(-lambda s) ds over
// the segment. The chord is split at every lattice-plane crossing, so the
// spatial allocation is exact and the segment weights telescope to
// (1 - exp(-lambda tau)) / lambda exactly.
template <typename F>
void walk_chord_segments(const PhaseGrid& pg, const Vec& x0, const Vec& v,
                         double tau, double lambda, F&& fn) {
  if (tau <= 0.0) return;
  int d = pg.dim();
  // Next crossing time of a lattice plane per axis, stepped in units of
  // h_i / |v_i|.
  double next[3] = {tau, tau, tau};
  double step[3] = {0.0, 0.0, 0.0};
  for (int i = 0; i < d; ++i) {
    double vi = v[i];
    if (std::fabs(vi) < 1e-300) continue;
    double hi = pg.box_side(i);
    step[i] = hi / std::fabs(vi);
    double u = (x0[i] - pg.box_lo(i)) / hi;
    double frac = vi > 0.0 ? std::ceil(u) - u : u - std::floor(u);
    if (frac < 1e-12) frac = 1.0;  // starting on a plane: full cell ahead
    next[i] = frac * step[i];
  }
  long guard = 4 + 2 * d;
  for (int i = 0; i < d; ++i)
    if (step[i] > 0.0) guard += 2 + static_cast<long>(tau / step[i]);
  double prev_t = 0.0, prev_e = 1.0;
  while (prev_t < tau && guard-- > 0) {
    double t = tau;
    int ax = -1;
    for (int i = 0; i < d; ++i)
      if (step[i] > 0.0 && next[i] < t) {
        t = next[i];
        ax = i;
      }
    if (ax >= 0) next[ax] += step[ax];
    double e = std::exp(-lambda * t);
    if (t > prev_t) {
      double w = lambda > 0.0 ? (prev_e - e) / lambda : t - prev_t;
      Vec mid = x0 + v * (0.5 * (prev_t + t));
      int sp = pg.locate_space_clamped(mid);
      if (sp >= 0) fn(sp, w);
    }
    prev_e = e;
    prev_t = t;
  }
}

// --- flight operators ------------------------------------------------------

// Boundary-to-boundary flight with exponential damping: incoming cell
// masses flow along their chords and land on outgoing cells with weight
// exp(-lambda tau). At lambda = 0 every column sums to exactly 1.
inline SparseOp assemble_flight_op(const TraceGrid& tg, const Domain& dom,
                                   double lambda) {
  SparseOp a = SparseOp::empty(tg.n_out(), tg.n_in());
  std::vector<std::pair<int, double>> col;
  for (int i = 0; i < tg.n_in(); ++i) {
    col.clear();
    const TraceCellRef& c = tg.in_cell(i);
    for_each_subchord(tg, dom, i,
                      [&](const Vec& x0, const Vec& v, double tau, double w) {
                        Vec xe = x0 + v * tau;
                        int r = tg.deposit_out(xe, c.s, c.o);
                        col.emplace_back(r, w * std::exp(-lambda * tau));
                      });
    a.push_column(col);
  }
  return a;
}

// Boundary-to-phase deposit: incoming trace mass spreads along its chords
// with density exp(-lambda s) ds. Applied matrix-free; the chords match
// assemble_flight_op chord for chord, so lambda * (this) + flight column
// sums equal the incoming mass exactly.
inline DVec apply_chord_density(const TraceGrid& tg, const PhaseGrid& pg,
                                const Domain& dom, const DVec& trace_in,
                                double lambda) {
  DVec y(static_cast<size_t>(pg.n_cells()), 0.0);
  for (int i = 0; i < tg.n_in(); ++i) {
    double m = trace_in[static_cast<size_t>(i)];
    if (m == 0.0) continue;
    const TraceCellRef& c = tg.in_cell(i);
    for_each_subchord(
        tg, dom, i, [&](const Vec& x0, const Vec& v, double tau, double w) {
          walk_chord_segments(pg, x0, v, tau, lambda,
                              [&](int sp, double seg) {
                                y[static_cast<size_t>(
                                    pg.cell_index(sp, c.s, c.o))] +=
                                    m * w * seg;
                              });
        });
  }
  return y;
}

// Phase-to-boundary exit map: phase cell masses fly forward and land on
// outgoing cells with weight exp(-lambda tau).
inline DVec apply_exit_map(const PhaseGrid& pg, const TraceGrid& tg,
                           const Domain& dom, const DVec& phase,
                           double lambda) {
  DVec y(static_cast<size_t>(tg.n_out()), 0.0);
  for (int sp : pg.occupied()) {
    for (int s = 0; s < pg.n_speed(); ++s) {
      for (int o = 0; o < pg.n_dir(); ++o) {
        double m = phase[static_cast<size_t>(pg.cell_index(sp, s, o))];
        if (m == 0.0) continue;
        Vec v = pg.direction().rep[static_cast<size_t>(o)] *
                pg.speed().rep[static_cast<size_t>(s)];
        v.d = pg.direction().dim;
        for_each_boxpoint(pg, sp, [&](const Vec& c, double w) {
          double tau = dom.exit_time_fwd(c, v);
          int r = tg.deposit_out(c + v * tau, s, o);
          y[static_cast<size_t>(r)] += m * w * std::exp(-lambda * tau);
        });
      }
    }
  }
  return y;
}

// Phase-to-phase free flight: phase cell masses spread forward along their
// chords with density exp(-lambda s) ds, using the same foot points and
// exit times as apply_exit_map.
inline DVec apply_interior_flight(const PhaseGrid& pg, const Domain& dom,
                                  const DVec& phase, double lambda) {
  DVec y(static_cast<size_t>(pg.n_cells()), 0.0);
  for (int sp : pg.occupied()) {
    for (int s = 0; s < pg.n_speed(); ++s) {
      for (int o = 0; o < pg.n_dir(); ++o) {
        double m = phase[static_cast<size_t>(pg.cell_index(sp, s, o))];
        if (m == 0.0) continue;
        Vec v = pg.direction().rep[static_cast<size_t>(o)] *
                pg.speed().rep[static_cast<size_t>(s)];
        v.d = pg.direction().dim;
        for_each_boxpoint(pg, sp, [&](const Vec& c, double w) {
          double tau = dom.exit_time_fwd(c, v);
          walk_chord_segments(pg, c, v, tau, lambda, [&](int sp2, double seg) {
            y[static_cast<size_t>(pg.cell_index(sp2, s, o))] += m * w * seg;
          });
        });
      }
    }
  }
  return y;
}

}  // namespace kinetrace
