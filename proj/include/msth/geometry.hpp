#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace msth {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalize(const Vec3& v) { return v / norm(v); }

/// Axis-aligned box.
struct Aabb {
  Vec3 lo{-1, -1, -1};
  Vec3 hi{1, 1, 1};

  Vec3 extent() const { return hi - lo; }
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
  /// Map a world point into [0,1]^3 (unclamped).
  Vec3 normalize_point(const Vec3& p) const {
    Vec3 e = extent();
    return {(p.x - lo.x) / e.x, (p.y - lo.y) / e.y, (p.z - lo.z) / e.z};
  }
  Vec3 denormalize_point(const Vec3& u) const {
    Vec3 e = extent();
    return {lo.x + u.x * e.x, lo.y + u.y * e.y, lo.z + u.z * e.z};
  }
};

/// Slab test. Returns false if the ray misses; otherwise the parametric
/// entry/exit distances along `dir`.
inline bool intersect_aabb(const Vec3& origin, const Vec3& dir, const Aabb& box, double& t0,
                           double& t1) {
  double lo = -1e300, hi = 1e300;
  for (int a = 0; a < 3; ++a) {
    double o = origin[a], d = dir[a];
    double bl = box.lo[a], bh = box.hi[a];
    if (std::abs(d) < 1e-300) {
      if (o < bl || o > bh) return false;
      continue;
    }
    double ta = (bl - o) / d, tb = (bh - o) / d;
    if (ta > tb) std::swap(ta, tb);
    lo = std::max(lo, ta);
    hi = std::min(hi, tb);
  }
  t0 = lo;
  t1 = hi;
  return hi > lo;
}

/// Ray-sphere intersection interval (unclamped). False on miss.
inline bool intersect_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center, double radius,
                             double& t0, double& t1) {
  Vec3 oc = origin - center;
  double b = dot(oc, dir);
  double c = dot(oc, oc) - radius * radius;
  double disc = b * b - c;
  if (disc <= 0) return false;
  double s = std::sqrt(disc);
  t0 = -b - s;
  t1 = -b + s;
  return true;
}

}  // namespace msth
