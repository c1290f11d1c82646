#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "kinetrace/errors.hpp"
#include "kinetrace/quad.hpp"
#include "kinetrace/rng.hpp"
#include "kinetrace/vec.hpp"

namespace kinetrace {

// Cosine threshold below which a boundary direction counts as grazing.
inline constexpr double kGrazeTol = 1e-9;

enum class DomainKind { disk, ball, ellipse, annulus, star };

// Bounded domain with C^1 boundary, given by a level function that is
// negative inside, zero on the boundary and positive outside. Closed set of
// shapes; disk/ball/ellipse/annulus have closed-form ray exits, the radial
// Fourier star falls back to the bracketing solver. Immutable after build.
class Domain {
 public:
  static Domain disk(double radius) {
    Domain d;
    d.kind_ = DomainKind::disk;
    d.dim_ = 2;
    d.r_out_ = radius;
    d.diameter_ = 2.0 * radius;
    d.check_positive(radius, "disk radius");
    return d;
  }

  static Domain ball(double radius) {
    Domain d;
    d.kind_ = DomainKind::ball;
    d.dim_ = 3;
    d.r_out_ = radius;
    d.diameter_ = 2.0 * radius;
    d.check_positive(radius, "ball radius");
    return d;
  }

  static Domain ellipse(double a, double b) {
    Domain d;
    d.kind_ = DomainKind::ellipse;
    d.dim_ = 2;
    d.a_ = a;
    d.b_ = b;
    d.diameter_ = 2.0 * std::max(a, b);
    d.check_positive(a, "ellipse semi-axis a");
    d.check_positive(b, "ellipse semi-axis b");
    d.build_arc_table();
    return d;
  }

  static Domain annulus(double r_inner, double r_outer) {
    Domain d;
    d.kind_ = DomainKind::annulus;
    d.dim_ = 2;
    d.r_in_ = r_inner;
    d.r_out_ = r_outer;
    d.diameter_ = 2.0 * r_outer;
    d.check_positive(r_inner, "annulus inner radius");
    if (r_outer <= r_inner)
      throw ConfigError("annulus: outer radius must exceed inner radius");
    return d;
  }

  // r(phi) = base * (1 + sum_k cos_k cos((k+1)phi) + sin_k sin((k+1)phi))
  static Domain star(double base_radius, std::vector<double> cos_coef,
                     std::vector<double> sin_coef) {
    Domain d;
    d.kind_ = DomainKind::star;
    d.dim_ = 2;
    d.r0_ = base_radius;
    d.ck_ = std::move(cos_coef);
    d.sk_ = std::move(sin_coef);
    d.check_positive(base_radius, "star base radius");
    double rmin = 1e300, rmax = 0.0;
    for (int i = 0; i < 4096; ++i) {
      double r = d.star_radius(2.0 * M_PI * i / 4096.0);
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
    }
    if (rmin <= 0.0)
      throw ConfigError("star: radial profile must stay positive");
    d.diameter_ = 2.0 * rmax;
    d.build_arc_table();
    return d;
  }

  DomainKind kind() const { return kind_; }
  int dim() const { return dim_; }
  double diameter() const { return diameter_; }
  double tol_boundary() const { return 1e-12 * diameter_; }

  double level(const Vec& x) const {
    switch (kind_) {
      case DomainKind::disk:
      case DomainKind::ball:
        return norm(x) - r_out_;
      case DomainKind::ellipse: {
        double u = x[0] / a_, v = x[1] / b_;
        return u * u + v * v - 1.0;
      }
      case DomainKind::annulus: {
        double r = norm(x);
        return (r - r_in_) * (r - r_out_);
      }
      case DomainKind::star:
        return norm(x) - star_radius(std::atan2(x[1], x[0]));
    }
    return 0.0;
  }

  Vec level_grad(const Vec& x) const {
    switch (kind_) {
      case DomainKind::disk:
      case DomainKind::ball: {
        double r = norm(x);
        if (r == 0.0) return zero_vec(dim_);
        Vec g = x * (1.0 / r);
        g.d = dim_;
        return g;
      }
      case DomainKind::ellipse:
        return Vec(2.0 * x[0] / (a_ * a_), 2.0 * x[1] / (b_ * b_));
      case DomainKind::annulus: {
        double r = norm(x);
        if (r == 0.0) return zero_vec(2);
        double dr = 2.0 * r - r_in_ - r_out_;
        return x * (dr / r);
      }
      case DomainKind::star: {
        double r = norm(x);
        if (r == 0.0) return zero_vec(2);
        double phi = std::atan2(x[1], x[0]);
        double rp = star_radius_deriv(phi);
        // grad(|x| - r(phi)) = x/|x| - r'(phi) * rot90(x)/|x|^2
        Vec g = x * (1.0 / r) - rot90(x) * (rp / (r * r));
        return g;
      }
    }
    return zero_vec(dim_);
  }

  bool inside(const Vec& x) const { return level(x) < 0.0; }

  bool on_boundary(const Vec& x, double tol_factor = 1e-9) const {
    return std::fabs(level(x)) <= tol_factor * diameter_;
  }

  // Outward unit normal at a boundary point.
  Vec normal(const Vec& x) const {
    Vec g = level_grad(x);
    double n = norm(g);
    if (n < 1e-10)
      throw NumericalError("normal: degenerate level gradient");
    Vec r = g * (1.0 / n);
    r.d = dim_;
    return r;
  }

  // First time t > 0 with x + t v outside Omega. From a boundary point the
  // trivial root at t = 0 is skipped when v points inward; if v points
  // outward the exit time is 0.
  double exit_time_fwd(const Vec& x, const Vec& v) const {
    double speed = norm(v);
    if (speed == 0.0) throw NumericalError("exit_time: zero velocity");
    if (on_boundary(x)) {
      Vec n = normal(x);
      if (dot(v, n) > 0.0) return 0.0;
    }
    switch (kind_) {
      case DomainKind::disk:
      case DomainKind::ball:
        return chord_circle(x, v, r_out_);
      case DomainKind::ellipse: {
        Vec xs(x[0] / a_, x[1] / b_);
        Vec vs(v[0] / a_, v[1] / b_);
        double ts = chord_circle(xs, vs, 1.0);
        return ts;
      }
      case DomainKind::annulus:
        return annulus_exit(x, v);
      case DomainKind::star:
        return exit_time_bracketed(x, v);
    }
    return 0.0;
  }

  double exit_time_bwd(const Vec& x, const Vec& v) const {
    return exit_time_fwd(x, -v);
  }

  // Reference solver: sample the level function along the ray at arc step
  // diameter/256 to bracket the first sign change, then bisection plus
  // safeguarded Newton down to |level| <= 1e-12 * diameter.
  double exit_time_bracketed(const Vec& x, const Vec& v) const {
    double speed = norm(v);
    double h = diameter_ / (256.0 * speed);
    double f_prev = level(x);
    double t_prev = 0.0;
    // From-boundary starts: nudge the lower bracket inside.
    if (std::fabs(f_prev) <= tol_boundary()) {
      double t_eps = h * 1e-6;
      double f_eps = level(x + v * t_eps);
      if (f_eps >= 0.0) return 0.0;  // leaves immediately (outward/grazing)
      t_prev = t_eps;
      f_prev = f_eps;
    }
    int k_max = 4 * 256 + 2;
    double t_hi = 0.0, f_hi = 0.0;
    bool found = false;
    for (int k = 1; k <= k_max; ++k) {
      double t = t_prev + h;
      double f = level(x + v * t);
      if (f >= 0.0) {
        t_hi = t;
        f_hi = f;
        found = true;
        break;
      }
      t_prev = t;
      f_prev = f;
    }
    if (!found)
      throw NumericalError("exit_time_bracketed: no boundary crossing found");
    // Bisection with Newton acceleration inside the bracket.
    double lo = t_prev, hi = t_hi, flo = f_prev;
    (void)f_hi;
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
      Vec p = x + v * t;
      double f = level(p);
      if (std::fabs(f) <= tol_boundary() && it > 0) return t;
      if (f < 0.0) {
        lo = t;
        flo = f;
      } else {
        hi = t;
      }
      double df = dot(level_grad(p), v);
      double tn = (df != 0.0) ? t - f / df : 0.5 * (lo + hi);
      if (tn <= lo || tn >= hi) tn = 0.5 * (lo + hi);
      t = tn;
      if (hi - lo < 1e-16 * (1.0 + hi)) break;
    }
    (void)flo;
    return t;
  }

  // Distance from an interior point to the boundary. Closed forms for the
  // circular shapes; otherwise Newton steps along the level gradient.
  double distance_to_boundary(const Vec& x) const {
    switch (kind_) {
      case DomainKind::disk:
      case DomainKind::ball:
        return r_out_ - norm(x);
      case DomainKind::annulus: {
        double r = norm(x);
        return std::min(r - r_in_, r_out_ - r);
      }
      default: {
        Vec p = x;
        for (int it = 0; it < 8; ++it) {
          double f = level(p);
          Vec g = level_grad(p);
          double gn2 = norm2(g);
          if (gn2 == 0.0) break;
          p -= g * (f / gn2);
        }
        return norm(p - x);
      }
    }
  }

  // Pull a near-boundary point exactly onto the boundary (Newton on level).
  Vec snap_to_boundary(const Vec& x) const {
    switch (kind_) {
      case DomainKind::disk:
      case DomainKind::ball: {
        double r = norm(x);
        if (r == 0.0) return x;
        Vec p = x * (r_out_ / r);
        p.d = dim_;
        return p;
      }
      case DomainKind::annulus: {
        double r = norm(x);
        double target = (r - r_in_ < r_out_ - r) ? r_in_ : r_out_;
        return x * (target / r);
      }
      default: {
        Vec p = x;
        for (int it = 0; it < 6; ++it) {
          double f = level(p);
          if (std::fabs(f) <= 0.01 * tol_boundary()) break;
          Vec g = level_grad(p);
          double gn2 = norm2(g);
          if (gn2 == 0.0) break;
          p -= g * (f / gn2);
        }
        return p;
      }
    }
  }

  double area() const {
    switch (kind_) {
      case DomainKind::disk:
        return M_PI * r_out_ * r_out_;
      case DomainKind::ball:
        return 4.0 / 3.0 * M_PI * r_out_ * r_out_ * r_out_;
      case DomainKind::ellipse:
        return M_PI * a_ * b_;
      case DomainKind::annulus:
        return M_PI * (r_out_ * r_out_ - r_in_ * r_in_);
      case DomainKind::star: {
        auto f = [&](double phi) {
          double r = star_radius(phi);
          return 0.5 * r * r;
        };
        return integrate_gl(f, 0.0, 2.0 * M_PI, 64);
      }
    }
    return 0.0;
  }

  // --- boundary parametrization by arc length (d = 2) ---

  double perimeter() const {
    switch (kind_) {
      case DomainKind::disk:
        return 2.0 * M_PI * r_out_;
      case DomainKind::annulus:
        return 2.0 * M_PI * (r_out_ + r_in_);
      case DomainKind::ellipse:
      case DomainKind::star:
        return arc_total_;
      default:
        throw NumericalError("perimeter: not a d=2 boundary curve");
    }
  }

  // Axis-aligned bounding box of the closure.
  void bounding_box(Vec& lo, Vec& hi) const {
    lo = zero_vec(dim_);
    hi = zero_vec(dim_);
    switch (kind_) {
      case DomainKind::disk:
      case DomainKind::ball:
      case DomainKind::annulus:
        for (int i = 0; i < dim_; ++i) {
          lo[i] = -r_out_;
          hi[i] = r_out_;
        }
        return;
      case DomainKind::ellipse:
        lo = Vec(-a_, -b_);
        hi = Vec(a_, b_);
        return;
      case DomainKind::star: {
        double m = 0.5 * diameter_;
        lo = Vec(-m, -m);
        hi = Vec(m, m);
        return;
      }
    }
  }

  // Total boundary measure: arc length (d = 2) or surface area (ball).
  double boundary_measure() const {
    if (kind_ == DomainKind::ball) return 4.0 * M_PI * r_out_ * r_out_;
    return perimeter();
  }

  // Surface-measure-uniform boundary point; works for every kind.
  Vec sample_boundary_uniform(CounterRng& rng) const {
    if (kind_ == DomainKind::ball) {
      double g1, g2, g3, g4;
      rng.normal_pair(g1, g2);
      rng.normal_pair(g3, g4);
      Vec u(g1, g2, g3);
      double r = norm(u);
      if (r < 1e-14) return Vec(r_out_, 0.0, 0.0);
      Vec p = u * (r_out_ / r);
      p.d = 3;
      return p;
    }
    return boundary_point(rng.uniform(0.0, perimeter()));
  }

  // Point at arc length s in [0, perimeter). For the annulus the outer loop
  // occupies [0, L_out) and the inner loop [L_out, L_out + L_in).
  Vec boundary_point(double s) const {
    switch (kind_) {
      case DomainKind::disk: {
        double phi = s / r_out_;
        return Vec(r_out_ * std::cos(phi), r_out_ * std::sin(phi));
      }
      case DomainKind::annulus: {
        double lout = 2.0 * M_PI * r_out_;
        if (s < lout) {
          double phi = s / r_out_;
          return Vec(r_out_ * std::cos(phi), r_out_ * std::sin(phi));
        }
        double phi = (s - lout) / r_in_;
        return Vec(r_in_ * std::cos(phi), r_in_ * std::sin(phi));
      }
      case DomainKind::ellipse: {
        double phi = angle_of_arc(s);
        return Vec(a_ * std::cos(phi), b_ * std::sin(phi));
      }
      case DomainKind::star: {
        double phi = angle_of_arc(s);
        double r = star_radius(phi);
        return Vec(r * std::cos(phi), r * std::sin(phi));
      }
      default:
        throw NumericalError("boundary_point: not a d=2 boundary curve");
    }
  }

  // Arc length of the boundary point nearest to p (p assumed on boundary).
  double boundary_arc(const Vec& p) const {
    double phi = std::atan2(p[1], p[0]);
    if (phi < 0.0) phi += 2.0 * M_PI;
    switch (kind_) {
      case DomainKind::disk:
        return phi * r_out_;
      case DomainKind::annulus: {
        double r = norm(p);
        double mid = 0.5 * (r_in_ + r_out_);
        if (r >= mid) return phi * r_out_;
        return 2.0 * M_PI * r_out_ + phi * r_in_;
      }
      case DomainKind::ellipse: {
        double u = std::atan2(p[1] / b_, p[0] / a_);
        if (u < 0.0) u += 2.0 * M_PI;
        return arc_of_angle(u);
      }
      case DomainKind::star:
        return arc_of_angle(phi);
      default:
        throw NumericalError("boundary_arc: not a d=2 boundary curve");
    }
  }

  double star_radius(double phi) const {
    double r = 1.0;
    for (size_t k = 0; k < ck_.size(); ++k)
      r += ck_[k] * std::cos(double(k + 1) * phi);
    for (size_t k = 0; k < sk_.size(); ++k)
      r += sk_[k] * std::sin(double(k + 1) * phi);
    return r0_ * r;
  }

  double star_radius_deriv(double phi) const {
    double r = 0.0;
    for (size_t k = 0; k < ck_.size(); ++k)
      r -= ck_[k] * double(k + 1) * std::sin(double(k + 1) * phi);
    for (size_t k = 0; k < sk_.size(); ++k)
      r += sk_[k] * double(k + 1) * std::cos(double(k + 1) * phi);
    return r0_ * r;
  }

  double radius_outer() const { return r_out_; }
  double radius_inner() const { return r_in_; }
  double semi_axis_a() const { return a_; }
  double semi_axis_b() const { return b_; }

  std::string kind_name() const {
    switch (kind_) {
      case DomainKind::disk: return "disk";
      case DomainKind::ball: return "ball";
      case DomainKind::ellipse: return "ellipse";
      case DomainKind::annulus: return "annulus";
      case DomainKind::star: return "smooth-star";
    }
    return "?";
  }

 private:
  Domain() = default;

  void check_positive(double v, const char* what) const {
    if (!(v > 0.0)) throw ConfigError(std::string(what) + " must be positive");
  }

  // First positive root of |x + t v| = R given |x| <= R (far root; the near
  // root is <= 0 for points inside or on the circle).
  static double chord_circle(const Vec& x, const Vec& v, double R) {
    double a = norm2(v);
    double b = dot(x, v);
    double c = norm2(x) - R * R;
    double disc = b * b - a * c;
    if (disc < 0.0) disc = 0.0;
    return (-b + std::sqrt(disc)) / a;
  }

  double annulus_exit(const Vec& x, const Vec& v) const {
    double t_out = chord_circle(x, v, r_out_);
    double a = norm2(v);
    double b = dot(x, v);
    double c = norm2(x) - r_in_ * r_in_;
    double disc = b * b - a * c;
    if (disc > 0.0) {
      double t_in = (-b - std::sqrt(disc)) / a;
      double t_eps = tol_boundary() / std::sqrt(a);
      if (t_in > t_eps && t_in < t_out) return t_in;
    }
    return t_out;
  }

  // Cumulative arc length table over the angle parameter (ellipse, star).
  void build_arc_table() {
    const int n = 8192;
    arc_cum_.assign(n + 1, 0.0);
    Quadrature1D q = gauss_legendre(4);
    auto speed = [&](double phi) {
      if (kind_ == DomainKind::ellipse) {
        double dx = -a_ * std::sin(phi), dy = b_ * std::cos(phi);
        return std::sqrt(dx * dx + dy * dy);
      }
      double r = star_radius(phi);
      double rp = star_radius_deriv(phi);
      return std::sqrt(r * r + rp * rp);
    };
    double h = 2.0 * M_PI / n;
    for (int i = 0; i < n; ++i)
      arc_cum_[i + 1] = arc_cum_[i] + integrate_gl(speed, i * h, (i + 1) * h, q);
    arc_total_ = arc_cum_[n];
  }

  double arc_of_angle(double phi) const {
    const int n = static_cast<int>(arc_cum_.size()) - 1;
    double h = 2.0 * M_PI / n;
    double u = phi / h;
    int i = std::clamp(static_cast<int>(u), 0, n - 1);
    double frac = u - i;
    return arc_cum_[i] + frac * (arc_cum_[i + 1] - arc_cum_[i]);
  }

  double angle_of_arc(double s) const {
    const int n = static_cast<int>(arc_cum_.size()) - 1;
    s = std::fmod(s, arc_total_);
    if (s < 0.0) s += arc_total_;
    // Binary search in the cumulative table, linear interpolation inside.
    int lo = 0, hi = n;
    while (hi - lo > 1) {
      int m = (lo + hi) / 2;
      if (arc_cum_[m] <= s)
        lo = m;
      else
        hi = m;
    }
    double seg = arc_cum_[hi] - arc_cum_[lo];
    double frac = seg > 0.0 ? (s - arc_cum_[lo]) / seg : 0.0;
    return (lo + frac) * (2.0 * M_PI / n);
  }

  DomainKind kind_ = DomainKind::disk;
  int dim_ = 2;
  double diameter_ = 2.0;
  double r_out_ = 1.0, r_in_ = 0.0;
  double a_ = 1.0, b_ = 1.0;
  double r0_ = 1.0;
  std::vector<double> ck_, sk_;
  std::vector<double> arc_cum_;
  double arc_total_ = 0.0;
};

}  // namespace kinetrace
