#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace kinetrace {

// Small runtime-dimension vector for positions and velocities, d in {2,3}.
// Unused components are kept at zero so dot/norm never need branching on d.
struct Vec {
  std::array<double, 3> c{0.0, 0.0, 0.0};
  int d = 2;

  Vec() = default;
  Vec(double x, double y) : c{x, y, 0.0}, d(2) {}
  Vec(double x, double y, double z) : c{x, y, z}, d(3) {}

  double& operator[](int i) { return c[static_cast<size_t>(i)]; }
  double operator[](int i) const { return c[static_cast<size_t>(i)]; }
  double x() const { return c[0]; }
  double y() const { return c[1]; }
  double z() const { return c[2]; }

  Vec& operator+=(const Vec& o) {
    c[0] += o.c[0]; c[1] += o.c[1]; c[2] += o.c[2];
    return *this;
  }
  Vec& operator-=(const Vec& o) {
    c[0] -= o.c[0]; c[1] -= o.c[1]; c[2] -= o.c[2];
    return *this;
  }
  Vec& operator*=(double s) {
    c[0] *= s; c[1] *= s; c[2] *= s;
    return *this;
  }
};

inline Vec operator+(Vec a, const Vec& b) { return a += b; }
inline Vec operator-(Vec a, const Vec& b) { return a -= b; }
inline Vec operator*(Vec a, double s) { return a *= s; }
inline Vec operator*(double s, Vec a) { return a *= s; }
inline Vec operator-(Vec a) { return a *= -1.0; }

inline double dot(const Vec& a, const Vec& b) {
  return a.c[0] * b.c[0] + a.c[1] * b.c[1] + a.c[2] * b.c[2];
}
inline double norm2(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }

inline Vec normalized(const Vec& a) {
  double n = norm(a);
  if (n == 0.0) throw std::domain_error("normalized: zero vector");
  return a * (1.0 / n);
}

inline Vec zero_vec(int d) {
  Vec v;
  v.d = d;
  return v;
}

// Counter-clockwise quarter turn; the canonical tangent for d = 2 normals.
inline Vec rot90(const Vec& a) { return Vec(-a.c[1], a.c[0]); }

inline Vec cross(const Vec& a, const Vec& b) {
  Vec r(a.c[1] * b.c[2] - a.c[2] * b.c[1],
        a.c[2] * b.c[0] - a.c[0] * b.c[2],
        a.c[0] * b.c[1] - a.c[1] * b.c[0]);
  return r;
}

// Orthonormal tangent frame at a unit normal n: d-1 vectors spanning n's
// orthogonal complement, built by Gram-Schmidt from coordinate axes.
inline std::vector<Vec> tangent_frame(const Vec& n) {
  std::vector<Vec> frame;
  if (n.d == 2) {
    frame.push_back(rot90(n));
    return frame;
  }
  // Pick the coordinate axis least aligned with n as the seed.
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::fabs(n[i]) < std::fabs(n[k])) k = i;
  Vec e = zero_vec(3);
  e[k] = 1.0;
  Vec t1 = e - n * dot(e, n);
  t1 = normalized(t1);
  t1.d = 3;
  Vec t2 = cross(n, t1);
  frame.push_back(t1);
  frame.push_back(t2);
  return frame;
}

}  // namespace kinetrace
