#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kinetrace/domain.hpp"
#include "kinetrace/errors.hpp"
#include "kinetrace/quad.hpp"
#include "kinetrace/rng.hpp"
#include "kinetrace/vec.hpp"
#include "kinetrace/vmeasure.hpp"

namespace kinetrace {

// --- deterministic reflection ---------------------------------------------

enum class ReflectionKind { specular, bounce_back };

struct ReflectionLaw {
  ReflectionKind kind = ReflectionKind::specular;

  // Involution on velocities at a wall point with unit normal n; maps the
  // outgoing half-space onto the incoming one and preserves speed and the
  // cosine magnitude (hence the trace measure).
  Vec apply(const Vec& n, const Vec& v) const {
    if (kind == ReflectionKind::bounce_back) return -v;
    return v - n * (2.0 * dot(v, n));
  }

  std::string name() const {
    return kind == ReflectionKind::specular ? "specular" : "bounce-back";
  }
};

// --- accommodation profile -------------------------------------------------

// Reflection weight alpha(x) in [0,1], parametrized by normalized arc
// length u in [0,1) along the boundary.
class AlphaField {
 public:
  static AlphaField constant(double a) {
    AlphaField f;
    f.vals_ = {a};
    f.check();
    return f;
  }
  // alpha = v0 on [0, split), v1 on [split, 1).
  static AlphaField two_patch(double v0, double v1, double split = 0.5) {
    AlphaField f;
    f.vals_ = {v0, v1};
    f.split_ = split;
    f.check();
    return f;
  }
  static AlphaField tabulated(std::vector<double> vals) {
    AlphaField f;
    f.vals_ = std::move(vals);
    f.tab_ = true;
    f.check();
    return f;
  }

  double eval(double u) const {
    u -= std::floor(u);
    if (tab_) {
      size_t i = std::min(static_cast<size_t>(u * vals_.size()),
                          vals_.size() - 1);
      return vals_[i];
    }
    if (vals_.size() == 1) return vals_[0];
    return u < split_ ? vals_[0] : vals_[1];
  }

  double sup() const { return *std::max_element(vals_.begin(), vals_.end()); }
  double inf() const { return *std::min_element(vals_.begin(), vals_.end()); }

 private:
  void check() const {
    if (vals_.empty()) throw ConfigError("alpha: empty table");
    for (double a : vals_)
      if (a < 0.0 || a > 1.0)
        throw ConfigError("alpha: values must lie in [0,1]");
  }
  std::vector<double> vals_;
  double split_ = 0.5;
  bool tab_ = false;
};

// --- diffuse kernels -------------------------------------------------------

struct KernelContext {
  Vec x;  // boundary point
  Vec n;  // outward unit normal
};

// Cosine-law unit direction into the wall (density prop. to |w.n| on the
// incoming hemisphere).
inline Vec sample_cosine_direction(const Vec& n, CounterRng& rng) {
  if (n.d == 2) {
    double psi = std::asin(2.0 * rng.next_double() - 1.0);
    Vec t = rot90(n);
    return -n * std::cos(psi) + t * std::sin(psi);
  }
  double u = rng.next_double();
  double c = std::sqrt(u);
  double s = std::sqrt(std::max(0.0, 1.0 - u));
  double phi = rng.uniform(0.0, 2.0 * M_PI);
  std::vector<Vec> fr = tangent_frame(n);
  Vec dir = -n * c + (fr[0] * std::cos(phi) + fr[1] * std::sin(phi)) * s;
  dir.d = 3;
  return dir;
}

// Integral over the incoming hemisphere of |w.n| dsigma.
inline double hemisphere_cosine_mass(int dim) {
  return dim == 2 ? 2.0 : M_PI;
}

// Kernel k(x, v, v') relating outgoing flux at v' to the incoming
// post-collision law k(x, ., v') mu_x(dv); normalized kinds integrate to 1
// against mu_x over the incoming hemisphere.
class DiffuseKernel {
 public:
  virtual ~DiffuseKernel() = default;
  virtual double eval(const KernelContext& ctx, const Vec& v,
                      const Vec& v_out) const = 0;
  virtual bool depends_on_outgoing() const { return false; }
  virtual bool normalized() const { return true; }
  // Exact draw from k(x, ., v') mu_x; kinds without a closed-form law use
  // rejection with a documented envelope.
  virtual Vec sample(const KernelContext& ctx, const Vec& v_out,
                     CounterRng& rng) const = 0;
  virtual std::string name() const = 0;
};

// Quadrature of int_{incoming, |v| >= floor} k(x, v, v') |v.n| m(dv).
inline double kernel_incoming_mass(const DiffuseKernel& k,
                                   const VelocityMeasure& m,
                                   const KernelContext& ctx, const Vec& v_out,
                                   double floor_rho = 0.0,
                                   int points_per_panel = 64, int n_dir = 256) {
  SpeedQuadrature sq = build_speed_quadrature(m, points_per_panel, floor_rho);
  DirectionQuadrature dq =
      build_direction_quadrature(m.dim(), m.dim() == 2 ? n_dir : 32);
  double inv_area = 1.0 / sphere_area(m.dim());
  double total = 0.0;
  for (size_t i = 0; i < sq.nodes.size(); ++i) {
    double rho = sq.nodes[i];
    if (rho < floor_rho) continue;
    double s = 0.0;
    for (size_t j = 0; j < dq.nodes.size(); ++j) {
      double c = dot(dq.nodes[j], ctx.n);
      if (c >= 0.0) continue;
      Vec v = dq.nodes[j] * rho;
      v.d = m.dim();
      s += dq.weights[j] * (-c) * rho * k.eval(ctx, v, v_out);
    }
    total += sq.weights[i] * s;
  }
  return total * inv_area;
}

// Maxwell wall kernel k = M_theta(v) / gamma with the wall Maxwellian
// M_theta(v) = (2 pi theta)^(-d/2) exp(-|v|^2 / (2 theta)). The
// normalization gamma = int M |v.n| m(dv) is computed against the actual
// (possibly truncated) measure, so the kernel stays exactly stochastic on
// truncated supports; it does not depend on the wall point.
class MaxwellKernel : public DiffuseKernel {
 public:
  MaxwellKernel(const VelocityMeasure& m, double theta)
      : measure_(m), theta_(theta) {
    if (theta <= 0.0) throw ConfigError("maxwell kernel: theta must be > 0");
    double cdir = hemisphere_cosine_mass(m.dim());
    double inv_area = 1.0 / sphere_area(m.dim());
    if (m.radial_kind() == VelocityMeasure::RadialKind::lebesgue) {
      auto f = [&](double rho) {
        return m.radial_density(rho) * rho * maxwellian(rho);
      };
      Quadrature1D gl = gauss_legendre(64);
      std::vector<double> edges =
          geometric_edges(std::max(m.rho_min(), m.rho_max() * 1e-12),
                          m.rho_max(), 0.1);
      gamma_ = inv_area * cdir * integrate_panels(f, edges, gl);
    } else {
      double s = 0.0;
      for (size_t i = 0; i < m.atom_speeds().size(); ++i)
        s += m.atom_masses()[i] * m.atom_speeds()[i] *
             maxwellian(m.atom_speeds()[i]);
      gamma_ = inv_area * cdir * s;
    }
    if (gamma_ <= 0.0)
      throw NumericalError("maxwell kernel: vanishing normalization");
    build_speed_cdf();
  }

  double maxwellian(double rho) const {
    double d = static_cast<double>(measure_.dim());
    return std::pow(2.0 * M_PI * theta_, -0.5 * d) *
           std::exp(-rho * rho / (2.0 * theta_));
  }

  double gamma() const { return gamma_; }

  double eval(const KernelContext&, const Vec& v, const Vec&) const override {
    return maxwellian(norm(v)) / gamma_;
  }

  Vec sample(const KernelContext& ctx, const Vec&,
             CounterRng& rng) const override {
    double rho = sample_speed(rng);
    Vec dir = sample_cosine_direction(ctx.n, rng);
    Vec v = dir * rho;
    v.d = measure_.dim();
    return v;
  }

  // Speed marginal of the post-collision law: prop. to w(rho) rho M(rho).
  double sample_speed(CounterRng& rng) const {
    if (measure_.radial_kind() == VelocityMeasure::RadialKind::atoms) {
      double u = rng.next_double() * atom_cdf_.back();
      size_t i = static_cast<size_t>(
          std::lower_bound(atom_cdf_.begin(), atom_cdf_.end(), u) -
          atom_cdf_.begin());
      i = std::min(i, atom_cdf_.size() - 1);
      return measure_.atom_speeds()[i];
    }
    double u = rng.next_double() * cdf_.back();
    size_t i = static_cast<size_t>(
        std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    if (i == 0) return grid_.front();
    i = std::min(i, cdf_.size() - 1);
    double c0 = cdf_[i - 1], c1 = cdf_[i];
    double t = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.5;
    return grid_[i - 1] + t * (grid_[i] - grid_[i - 1]);
  }

  std::string name() const override { return "maxwell"; }

 private:
  void build_speed_cdf() {
    if (measure_.radial_kind() == VelocityMeasure::RadialKind::atoms) {
      double acc = 0.0;
      for (size_t i = 0; i < measure_.atom_speeds().size(); ++i) {
        acc += measure_.atom_masses()[i] * measure_.atom_speeds()[i] *
               maxwellian(measure_.atom_speeds()[i]);
        atom_cdf_.push_back(acc);
      }
      return;
    }
    const int n = 4096;
    double lo = measure_.rho_min(), hi = measure_.rho_max();
    grid_.resize(n + 1);
    cdf_.resize(n + 1);
    double h = (hi - lo) / n;
    auto f = [&](double rho) {
      return measure_.radial_density(rho) * rho * maxwellian(rho);
    };
    cdf_[0] = 0.0;
    grid_[0] = lo;
    for (int i = 1; i <= n; ++i) {
      double a = lo + (i - 1) * h, b = lo + i * h;
      grid_[static_cast<size_t>(i)] = b;
      cdf_[static_cast<size_t>(i)] =
          cdf_[static_cast<size_t>(i) - 1] +
          (f(a) + 4.0 * f(0.5 * (a + b)) + f(b)) * h / 6.0;
    }
  }

  VelocityMeasure measure_;
  double theta_;
  double gamma_ = 0.0;
  std::vector<double> grid_, cdf_, atom_cdf_;
};

// Heavy low-speed kernel
//   k(x,v,v') = c |v|^(-p) log^(-q)(e + 1/|v|) 1_{|v| <= cutoff},
// with c fixed by stochasticity against the measure. The post-collision
// speed density is prop. to rho^(d-p) log^(-q)(e + 1/rho); for p = d+1 the
// sampler splits at cutoff/2 and uses the exact inverse CDF of
// 1/(rho log^q(1/rho)) below the split (valid for q > 1).
class HeavyLowSpeedKernel : public DiffuseKernel {
 public:
  HeavyLowSpeedKernel(const VelocityMeasure& m, double p, double q,
                      double cutoff = 1.0)
      : measure_(m), p_(p), q_(q), cutoff_(cutoff) {
    if (m.radial_kind() != VelocityMeasure::RadialKind::lebesgue)
      throw ConfigError("heavy-low-speed kernel needs a Lebesgue measure");
    if (cutoff_ <= 0.0) throw ConfigError("heavy kernel: cutoff must be > 0");
    if (q < 0.0) throw ConfigError("heavy kernel: q must be >= 0");
    b_ = std::min(cutoff_, m.rho_max());
    if (m.rho_min() >= b_)
      throw ConfigError("heavy kernel: empty support below the cutoff");
    double s = m.dim() - p + 1.0;  // speed density ~ rho^(s-1) log^(-q)
    s_ = s;
    if (s < 0.0 || (s == 0.0 && q <= 1.0))
      throw ConfigError("heavy kernel: not normalizable for these exponents");
    // c: (cdir/|S|) int_lo^b w(rho) rho g(rho) drho = 1. Combined exponent
    // rho^(d-p) >= rho^-1 on normalizable pairs, so no intermediate
    // overflow down to rho = e^-700.
    double lo = m.rho_min();
    auto f = [&](double rho) {
      return sphere_area(m.dim()) *
             std::pow(rho, static_cast<double>(m.dim()) - p_) *
             std::pow(std::log(M_E + 1.0 / rho), -q_);
    };
    double I;
    if (lo > 0.0) {
      Quadrature1D gl = gauss_legendre(64);
      I = integrate_panels(f, geometric_edges(lo, b_, 0.5), gl);
    } else {
      I = integrate_radial_to_zero(f, b_);
    }
    double cdir = hemisphere_cosine_mass(m.dim());
    double inv_area = 1.0 / sphere_area(m.dim());
    c_ = 1.0 / (inv_area * cdir * I);
    setup_sampler();
  }

  double profile(double rho) const {
    if (rho <= 0.0 || rho > b_) return 0.0;
    return std::pow(rho, -p_) * std::pow(std::log(M_E + 1.0 / rho), -q_);
  }

  double normalization_constant() const { return c_; }

  double eval(const KernelContext&, const Vec& v, const Vec&) const override {
    return c_ * profile(norm(v));
  }

  Vec sample(const KernelContext& ctx, const Vec&,
             CounterRng& rng) const override {
    double rho = sample_speed(rng);
    Vec dir = sample_cosine_direction(ctx.n, rng);
    Vec v = dir * rho;
    v.d = measure_.dim();
    return v;
  }

  // Speed density f(rho) prop. to rho^(s-1) log^(-q)(e + 1/rho) on (lo, b].
  double sample_speed(CounterRng& rng) const {
    const int max_tries = 100000;
    for (int it = 0; it < max_tries; ++it) {
      double pick = rng.next_double() * (w_low_ + w_high_);
      if (pick < w_high_ || w_low_ == 0.0) {
        // upper piece [split, b]: uniform envelope
        double rho = rng.uniform(split_, b_);
        double f = speed_density(rho);
        if (rng.next_double() * env_high_ < f) return rho;
      } else if (s_ == 0.0) {
        // exact inverse CDF of 1/(rho log^q(1/rho)) on (0, split]
        double w = rng.next_double() * H_split_;
        double L = std::pow((q_ - 1.0) * w, -1.0 / (q_ - 1.0));
        double rho = std::exp(-L);
        if (rho <= 0.0 || rho < measure_.rho_min()) continue;
        double acc = std::pow(std::log(1.0 / rho) /
                                  std::log(M_E + 1.0 / rho),
                              q_);
        if (rng.next_double() < acc) return rho;
      } else {
        // power envelope rho^(s-1) on (0, split], inverse CDF rho = split*u^(1/s)
        double u = rng.next_double();
        double rho = split_ * std::pow(u, 1.0 / s_);
        if (rho <= 0.0 || rho < measure_.rho_min()) continue;
        double acc = std::pow(std::log(M_E + 1.0 / split_) /
                                  std::log(M_E + 1.0 / rho),
                              q_);
        if (rng.next_double() < acc) return rho;
      }
    }
    throw NumericalError("heavy kernel sampler: rejection budget exhausted");
  }

  std::string name() const override { return "heavy-low-speed"; }

 private:
  double speed_density(double rho) const {
    if (rho <= 0.0 || rho > b_ || rho < measure_.rho_min()) return 0.0;
    return std::pow(rho, s_ - 1.0) *
           std::pow(std::log(M_E + 1.0 / rho), -q_);
  }

  void setup_sampler() {
    split_ = std::min(0.5 * b_, 0.5);
    if (measure_.rho_min() >= split_) {
      // support entirely in the bounded upper piece
      split_ = measure_.rho_min();
      w_low_ = 0.0;
    } else if (s_ == 0.0) {
      H_split_ = std::pow(std::log(1.0 / split_), 1.0 - q_) / (q_ - 1.0);
      w_low_ = H_split_;
    } else {
      // envelope rho^(s-1) * log^(-q)(e + 1/split) dominates on (0, split]
      w_low_ = std::pow(split_, s_) / s_ *
               std::pow(std::log(M_E + 1.0 / split_), -q_);
    }
    // upper piece: rho^(s-1) is monotone, the log factor peaks at b
    env_high_ = std::max(std::pow(split_, s_ - 1.0), std::pow(b_, s_ - 1.0)) *
                std::pow(std::log(M_E + 1.0 / b_), -q_);
    w_high_ = env_high_ * (b_ - split_);
  }

  VelocityMeasure measure_;
  double p_, q_, cutoff_, b_;
  double s_ = 0.0;
  double c_ = 1.0;
  double split_ = 0.5, w_low_ = 0.0, w_high_ = 0.0, env_high_ = 1.0;
  double H_split_ = 0.0;
};

// Piecewise-linear speed profile kernel, normalized against the measure.
class TabulatedKernel : public DiffuseKernel {
 public:
  TabulatedKernel(const VelocityMeasure& m, std::vector<double> speeds,
                  std::vector<double> values)
      : measure_(m), sp_(std::move(speeds)), val_(std::move(values)) {
    if (sp_.size() != val_.size() || sp_.size() < 2)
      throw ConfigError("tabulated kernel: need matching tables, size >= 2");
    for (size_t i = 1; i < sp_.size(); ++i)
      if (sp_[i] <= sp_[i - 1])
        throw ConfigError("tabulated kernel: speeds must increase");
    for (double v : val_)
      if (v < 0.0) throw ConfigError("tabulated kernel: negative value");
    auto f = [&](double rho) {
      return m.radial_density(rho) * rho * profile(rho);
    };
    double lo = std::max(m.rho_min(), 1e-12 * m.rho_max());
    Quadrature1D gl = gauss_legendre(64);
    double I = integrate_panels(f, geometric_edges(lo, m.rho_max(), 0.3), gl);
    if (I <= 0.0) throw ConfigError("tabulated kernel: zero mass profile");
    double cdir = hemisphere_cosine_mass(m.dim());
    c_ = sphere_area(m.dim()) / (cdir * I);
    fmax_ = *std::max_element(val_.begin(), val_.end());
  }

  double profile(double rho) const {
    if (rho <= sp_.front()) return val_.front();
    if (rho >= sp_.back()) return val_.back();
    size_t i = static_cast<size_t>(
        std::upper_bound(sp_.begin(), sp_.end(), rho) - sp_.begin());
    double t = (rho - sp_[i - 1]) / (sp_[i] - sp_[i - 1]);
    return val_[i - 1] + t * (val_[i] - val_[i - 1]);
  }

  double eval(const KernelContext&, const Vec& v, const Vec&) const override {
    return c_ * profile(norm(v));
  }

  Vec sample(const KernelContext& ctx, const Vec&,
             CounterRng& rng) const override {
    // rejection: propose speed from the measure, weight by rho * profile
    const int max_tries = 1000000;
    double wmax = measure_.rho_max() * fmax_;
    for (int it = 0; it < max_tries; ++it) {
      double rho = measure_.sample_speed(rng);
      if (rng.next_double() * wmax < rho * profile(rho)) {
        Vec dir = sample_cosine_direction(ctx.n, rng);
        Vec v = dir * rho;
        v.d = measure_.dim();
        return v;
      }
    }
    throw NumericalError("tabulated kernel sampler: budget exhausted");
  }

  std::string name() const override { return "tabulated"; }

 private:
  VelocityMeasure measure_;
  std::vector<double> sp_, val_;
  double c_ = 1.0, fmax_ = 1.0;
};

// Arbitrary kernel function; test/analysis use. Not normalized unless the
// caller says so; sampling rejects against the bare measure.
class FunctionKernel : public DiffuseKernel {
 public:
  using Fn = std::function<double(const KernelContext&, const Vec&, const Vec&)>;
  FunctionKernel(const VelocityMeasure& m, Fn fn, double bound,
                 bool outgoing_dependent, bool is_normalized)
      : measure_(m), fn_(std::move(fn)), bound_(bound),
        outdep_(outgoing_dependent), norm_(is_normalized) {}

  double eval(const KernelContext& ctx, const Vec& v,
              const Vec& vp) const override {
    return fn_(ctx, v, vp);
  }
  bool depends_on_outgoing() const override { return outdep_; }
  bool normalized() const override { return norm_; }

  Vec sample(const KernelContext& ctx, const Vec& vp,
             CounterRng& rng) const override {
    const int max_tries = 1000000;
    double rmax = measure_.rho_max();
    for (int it = 0; it < max_tries; ++it) {
      Vec v = sample_velocity_uniform(measure_, rng);
      double c = dot(v, ctx.n);
      if (c >= 0.0) continue;
      double w = fn_(ctx, v, vp) * (-c);
      if (rng.next_double() * bound_ * rmax < w) return v;
    }
    throw NumericalError("function kernel sampler: budget exhausted");
  }

  std::string name() const override { return "custom"; }

 private:
  VelocityMeasure measure_;
  Fn fn_;
  double bound_;
  bool outdep_, norm_;
};

// k_m = min(k, m 1_{|v| <= m}): monotone truncation, sub-stochastic.
class TruncatedKernel : public DiffuseKernel {
 public:
  TruncatedKernel(std::shared_ptr<const DiffuseKernel> base, double m)
      : base_(std::move(base)), m_(m) {
    if (m_ <= 0.0) throw ConfigError("truncate_kernel: level must be > 0");
  }
  double eval(const KernelContext& ctx, const Vec& v,
              const Vec& vp) const override {
    if (norm(v) > m_) return 0.0;
    return std::min(base_->eval(ctx, v, vp), m_);
  }
  bool depends_on_outgoing() const override {
    return base_->depends_on_outgoing();
  }
  bool normalized() const override { return false; }
  Vec sample(const KernelContext&, const Vec&, CounterRng&) const override {
    throw NumericalError("truncated kernel: sampling not supported");
  }
  std::string name() const override { return base_->name() + "-truncated"; }
  double level() const { return m_; }

 private:
  std::shared_ptr<const DiffuseKernel> base_;
  double m_;
};

inline std::shared_ptr<const DiffuseKernel> truncate_kernel(
    std::shared_ptr<const DiffuseKernel> base, double m) {
  return std::make_shared<TruncatedKernel>(std::move(base), m);
}

// k_n = k 1_{|v| > 1/n} / beta_n: removes speeds below 1/n and renormalizes
// by the retained incoming mass beta_n(x, v').
class RenormalizedKernel : public DiffuseKernel {
 public:
  using BetaFn = std::function<double(const KernelContext&, const Vec&)>;
  RenormalizedKernel(std::shared_ptr<const DiffuseKernel> base, double n,
                     BetaFn beta)
      : base_(std::move(base)), floor_(1.0 / n), beta_(std::move(beta)) {}

  double eval(const KernelContext& ctx, const Vec& v,
              const Vec& vp) const override {
    if (norm(v) <= floor_) return 0.0;
    double b = beta_(ctx, vp);
    if (b < 1e-12)
      throw NumericalError("renormalized kernel: retained mass below 1e-12");
    return base_->eval(ctx, v, vp) / b;
  }
  bool depends_on_outgoing() const override {
    return base_->depends_on_outgoing();
  }
  Vec sample(const KernelContext& ctx, const Vec& vp,
             CounterRng& rng) const override {
    // rejection: resample the base until above the floor
    for (int it = 0; it < 100000; ++it) {
      Vec v = base_->sample(ctx, vp, rng);
      if (norm(v) > floor_) return v;
    }
    throw NumericalError("renormalized kernel sampler: budget exhausted");
  }
  std::string name() const override { return base_->name() + "-lowspeed-cut"; }
  double floor_speed() const { return floor_; }

 private:
  std::shared_ptr<const DiffuseKernel> base_;
  double floor_;
  BetaFn beta_;
};

struct LowspeedRenormalization {
  std::vector<double> beta;  // one per probe (x, v') pair
  std::shared_ptr<const DiffuseKernel> kernel;
};

// Probes beta_n on the supplied (context, outgoing velocity) pairs and
// builds k_n. For kernels independent of v' and isotropic in x (all the
// built-in kinds) beta_n is a single scalar, which is cached.
inline LowspeedRenormalization lowspeed_renormalize(
    std::shared_ptr<const DiffuseKernel> base, const VelocityMeasure& m,
    double n, const std::vector<KernelContext>& probes_ctx,
    const std::vector<Vec>& probes_vout) {
  if (n <= 0.0) throw ConfigError("lowspeed_renormalize: n must be > 0");
  LowspeedRenormalization out;
  double floor = 1.0 / n;
  for (size_t i = 0; i < probes_ctx.size(); ++i) {
    double b = kernel_incoming_mass(*base, m, probes_ctx[i], probes_vout[i],
                                    floor);
    if (b < 1e-12)
      throw NumericalError("lowspeed_renormalize: beta_n below 1e-12");
    out.beta.push_back(b);
  }
  if (!base->depends_on_outgoing()) {
    Vec nref = zero_vec(m.dim());
    nref.c[0] = 1.0;
    double cached = out.beta.empty()
                        ? kernel_incoming_mass(*base, m,
                                               KernelContext{nref, nref},
                                               zero_vec(m.dim()), floor)
                        : out.beta.front();
    out.kernel = std::make_shared<RenormalizedKernel>(
        base, n, [cached](const KernelContext&, const Vec&) { return cached; });
  } else {
    VelocityMeasure mc = m;
    auto base_copy = base;
    out.kernel = std::make_shared<RenormalizedKernel>(
        base, n, [base_copy, mc, floor](const KernelContext& ctx, const Vec& vp) {
          return kernel_incoming_mass(*base_copy, mc, ctx, vp, floor);
        });
  }
  return out;
}

// --- partly diffuse boundary operator --------------------------------------

struct PartlyDiffuseBoundary {
  AlphaField alpha = AlphaField::constant(1.0);
  ReflectionLaw reflection;
  std::shared_ptr<const DiffuseKernel> kernel;  // may be null when alpha == 1

  // Diffuse column mass (1 - alpha(u)) * int k mu_x; equals 1 - alpha for
  // stochastic kernels.
  double beta(double u, double kernel_mass = 1.0) const {
    return (1.0 - alpha.eval(u)) * kernel_mass;
  }
};

// Post-collision draw at a wall point: reflect with probability alpha(u),
// otherwise sample the diffuse kernel; grazing outcomes are resampled.
inline Vec sample_post_collision(const PartlyDiffuseBoundary& bc,
                                 const KernelContext& ctx, double u_arc,
                                 const Vec& v_out, CounterRng& rng,
                                 int max_resample = 256) {
  double a = bc.alpha.eval(u_arc);
  for (int it = 0; it < max_resample; ++it) {
    Vec v;
    if (rng.next_double() < a) {
      v = bc.reflection.apply(ctx.n, v_out);
    } else {
      if (!bc.kernel)
        throw NumericalError("sample_post_collision: no diffuse kernel");
      v = bc.kernel->sample(ctx, v_out, rng);
    }
    double sp = norm(v);
    if (sp > 0.0 && dot(v, ctx.n) / sp < -kGrazeTol) return v;
  }
  throw NumericalError("sample_post_collision: resample budget exhausted");
}

// --- essential spectral radius bound ---------------------------------------

struct OscillationReport {
  double beta_inf = 0.0;
  double beta_sup = 0.0;
  double oscillation = 0.0;
  double bound = 0.0;   // (1 + osc)^2 - sup^2, upper bound for r_ess
  bool predicate = false;  // inf > 1 + sup - sqrt(1 + sup^2)
};

inline OscillationReport oscillation_bound(const std::vector<double>& beta) {
  if (beta.empty()) throw ConfigError("oscillation_bound: empty profile");
  OscillationReport r;
  r.beta_inf = *std::min_element(beta.begin(), beta.end());
  r.beta_sup = *std::max_element(beta.begin(), beta.end());
  r.oscillation = r.beta_sup - r.beta_inf;
  r.bound = (1.0 + r.oscillation) * (1.0 + r.oscillation) -
            r.beta_sup * r.beta_sup;
  r.predicate =
      r.beta_inf > 1.0 + r.beta_sup - std::sqrt(1.0 + r.beta_sup * r.beta_sup);
  return r;
}

// --- diffuseness probe -----------------------------------------------------

struct DiffusenessReport {
  double wld_fraction = 0.0;   // probes where k > 0 on a small velocity ball
  double sld_fraction = 0.0;   // probes where k >= delta on a delta-ball
  double positivity_rate = 0.0;
  bool wld = false;
  bool sld = false;
};

// The lower-diffuseness notions ask for SOME velocity ball with a kernel
// floor, so each boundary probe scans a deterministic ladder of candidate
// centers (speed fractions of the support, non-grazing angles) and keeps
// the best one; a single random center would miss kernels that vanish on
// part of the support.
inline DiffusenessReport probe_diffuseness(const Domain& dom,
                                           const VelocityMeasure& m,
                                           const DiffuseKernel& k,
                                           int n_probes, uint64_t seed) {
  CounterRng rng(seed, 0xd1f5ULL);
  const double deltas[] = {1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3};
  const double speed_frac[] = {0.02, 0.08, 0.2, 0.4, 0.65, 0.9};
  const double angles[] = {-1.1, -0.55, 0.0, 0.55, 1.1};
  int wld_hits = 0, sld_hits = 0;
  long pos = 0, tot = 0;
  for (int i = 0; i < n_probes; ++i) {
    Vec x = dom.sample_boundary_uniform(rng);
    Vec n = dom.normal(x);
    KernelContext ctx{x, n};
    Vec vp = sample_velocity_uniform(m, rng);
    if (dot(vp, n) < 0.0) vp = vp - n * (2.0 * dot(vp, n));
    Vec t = tangent_frame(n)[0];
    bool wld_here = false, sld_here = false;
    for (double f : speed_frac) {
      double rho0 = m.rho_min() + f * (m.rho_max() - m.rho_min());
      if (rho0 <= 0.0) continue;
      for (double psi : angles) {
        Vec v0 = (-n * std::cos(psi) + t * std::sin(psi)) * rho0;
        v0.d = m.dim();
        for (double delta : deltas) {
          double kmin = 1e300;
          bool valid = true;
          for (int s = 0; s < 12; ++s) {
            Vec dv = sample_direction_uniform(m.dim(), rng) *
                     (delta * rng.next_double());
            Vec v = v0 + dv;
            double sp = norm(v);
            if (sp < m.rho_min() || sp > m.rho_max() || dot(v, n) >= 0.0) {
              valid = false;
              break;
            }
            kmin = std::min(kmin, k.eval(ctx, v, vp));
          }
          if (!valid) continue;
          if (kmin > 0.0) wld_here = true;
          if (kmin >= delta) sld_here = true;
          if (sld_here) break;
        }
        if (sld_here) break;
      }
      if (sld_here) break;
    }
    wld_hits += wld_here ? 1 : 0;
    sld_hits += sld_here ? 1 : 0;
    // positivity spot checks
    for (int s = 0; s < 8; ++s) {
      Vec v = sample_velocity_uniform(m, rng);
      if (dot(v, n) > 0.0) v = v - n * (2.0 * dot(v, n));
      ++tot;
      if (k.eval(ctx, v, vp) > 0.0) ++pos;
    }
  }
  DiffusenessReport r;
  r.wld_fraction = static_cast<double>(wld_hits) / n_probes;
  r.sld_fraction = static_cast<double>(sld_hits) / n_probes;
  r.positivity_rate = tot > 0 ? static_cast<double>(pos) / tot : 0.0;
  r.wld = wld_hits == n_probes;
  r.sld = sld_hits == n_probes;
  return r;
}

// --- sweeping divergence probe ---------------------------------------------

enum class DivergenceVerdict { convergent, divergent, inconclusive };

struct DivergenceReport {
  std::vector<double> floors;
  std::vector<double> values;  // I_j = int_{|v| >= floor_j} k tau |v.n| m(dv)
  DivergenceVerdict verdict = DivergenceVerdict::inconclusive;
  double last_slope = 0.0;  // log2(I_L / I_{L-1})
};

inline const char* verdict_name(DivergenceVerdict v) {
  switch (v) {
    case DivergenceVerdict::convergent: return "convergent";
    case DivergenceVerdict::divergent: return "divergent";
    case DivergenceVerdict::inconclusive: return "inconclusive";
  }
  return "?";
}

// Nested speed cutoffs 2^-j; the integrand is the flight-time-weighted
// kernel mass whose divergence drives sweeping toward zero speed. Verdict:
// Cauchy within cauchy_tol -> convergent; dyadic log-slope of the last two
// increments above slope_min -> divergent; otherwise inconclusive. (A pure
// doubling test misses log-corrected rates like rho^-2 log^-2: the dyadic
// ratio tends to 2 (j/(j+1))^2 < 2.)
inline DivergenceReport sweeping_divergence_probe(
    const DiffuseKernel& k, const VelocityMeasure& m, const Domain& dom,
    const KernelContext& ctx, const Vec& v_out, int levels = 12,
    double cauchy_tol = 1e-4, double slope_min = 0.5) {
  DivergenceReport rep;
  DirectionQuadrature dq =
      build_direction_quadrature(m.dim(), m.dim() == 2 ? 128 : 24);
  Quadrature1D gl = gauss_legendre(24);
  double inv_area = 1.0 / sphere_area(m.dim());
  // Precompute chord lengths per incoming direction (speed-independent).
  std::vector<double> chord(dq.nodes.size(), 0.0);
  std::vector<double> cosw(dq.nodes.size(), 0.0);
  for (size_t j = 0; j < dq.nodes.size(); ++j) {
    double c = dot(dq.nodes[j], ctx.n);
    cosw[j] = c;
    if (c < -kGrazeTol)
      chord[j] = dom.exit_time_fwd(ctx.x, dq.nodes[j]);  // unit speed
  }
  auto panel = [&](double a, double b) {
    // int_a^b w(rho) drho int |cos| rho k tau(rho) dsigma / |S|
    auto f = [&](double rho) {
      double s = 0.0;
      for (size_t j = 0; j < dq.nodes.size(); ++j) {
        if (cosw[j] >= -kGrazeTol) continue;
        Vec v = dq.nodes[j] * rho;
        v.d = m.dim();
        double tau = chord[j] / rho;
        s += dq.weights[j] * (-cosw[j]) * rho * k.eval(ctx, v, v_out) * tau;
      }
      return m.radial_density(rho) * s * inv_area;
    };
    return integrate_gl(f, a, b, gl);
  };
  double hi = m.rho_max();
  double acc = 0.0;
  double prev_floor = hi;
  for (int j = 0; j <= levels; ++j) {
    double floor = std::min(hi, std::pow(2.0, -j));
    if (floor < prev_floor) {
      // split [floor, prev_floor] into dyadic panels
      double a = floor, b = prev_floor;
      acc += panel(a, b);
      prev_floor = floor;
    }
    rep.floors.push_back(floor);
    rep.values.push_back(acc);
  }
  size_t L = rep.values.size();
  if (L >= 3) {
    double i2 = rep.values[L - 1], i1 = rep.values[L - 2], i0 = rep.values[L - 3];
    if (i2 > 0.0 && std::fabs(i2 - i1) <= cauchy_tol * i2) {
      rep.verdict = DivergenceVerdict::convergent;
    } else if (i1 > 0.0 && i0 > 0.0) {
      double s1 = std::log2(i2 / i1);
      double s0 = std::log2(i1 / i0);
      rep.last_slope = s1;
      if (std::min(s0, s1) >= slope_min)
        rep.verdict = DivergenceVerdict::divergent;
    }
  }
  return rep;
}

}  // namespace kinetrace
