#pragma once

// SE(3) value types: vectors, unit quaternions, rigid poses, waypoints.
//
// Conventions (fixed for the whole project):
//   - world frame is right-handed with +z up, units meters and radians
//   - rotations are unit quaternions stored with canonical sign (w >= 0;
//     if w == 0 the first nonzero component is positive), so equal rotations
//     have equal component tuples
//   - compose(a, b) applies b first, then a
//   - interpolation is lerp on translation and shortest-path slerp on rotation

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "trex/errors.hpp"

namespace trex {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr Vec3 operator+(const Vec3& o) const {
    return {x + o.x, y + o.y, z + o.z};
  }
  constexpr Vec3 operator-(const Vec3& o) const {
    return {x - o.x, y - o.y, z - o.z};
  }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3& o) const {
    return x == o.x && y == o.y && z == o.z;
  }

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  constexpr double squared_norm() const { return x * x + y * y + z * z; }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

constexpr double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}

// Points and free vectors share the representation; the distinction lives in
// the type system of the constraint language, not here.
using Point3 = Vec3;

inline Vec3 normalized(const Vec3& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error("cannot normalize a zero or non-finite vector");
  }
  return v / n;
}

// A direction with norm 1 (enforced at construction).
class UnitVector3 {
 public:
  UnitVector3() : v_(1.0, 0.0, 0.0) {}
  explicit UnitVector3(const Vec3& v) : v_(normalized(v)) {}

  const Vec3& vec() const { return v_; }
  double x() const { return v_.x; }
  double y() const { return v_.y; }
  double z() const { return v_.z; }

 private:
  Vec3 v_;
};

// Unit quaternion.  Components are kept normalized and sign-canonical, so two
// Rotation values representing the same rotation compare equal componentwise.
class Rotation {
 public:
  Rotation() : w_(1.0), x_(0.0), y_(0.0), z_(0.0) {}

  // Normalizes and canonicalizes.  Throws on near-zero or non-finite input.
  Rotation(double w, double x, double y, double z) : w_(w), x_(x), y_(y), z_(z) {
    const double n = std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_);
    if (!(n > 1e-12) || !std::isfinite(n)) {
      throw Error("quaternion has zero or non-finite norm");
    }
    w_ /= n;
    x_ /= n;
    y_ /= n;
    z_ /= n;
    canonicalize();
  }

  static Rotation identity() { return Rotation(); }

  static Rotation from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 u = normalized(axis);
    const double h = 0.5 * angle;
    const double s = std::sin(h);
    return Rotation(std::cos(h), u.x * s, u.y * s, u.z * s);
  }

  // Exponential map: rotation vector (axis * angle) to quaternion.
  static Rotation exp(const Vec3& omega) {
    const double angle = omega.norm();
    if (angle < 1e-12) {
      // First-order expansion keeps the map smooth through zero.
      return Rotation(1.0, 0.5 * omega.x, 0.5 * omega.y, 0.5 * omega.z);
    }
    return from_axis_angle(omega, angle);
  }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  Rotation inverse() const {
    Rotation r;
    r.w_ = w_;
    r.x_ = -x_;
    r.y_ = -y_;
    r.z_ = -z_;
    r.canonicalize();
    return r;
  }

  // Hamilton product: (*this) * o applies o first, then this.
  Rotation operator*(const Rotation& o) const {
    Rotation r;
    r.w_ = w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_;
    r.x_ = w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_;
    r.y_ = w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_;
    r.z_ = w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_;
    r.renormalize();
    return r;
  }

  Vec3 rotate(const Vec3& v) const {
    // q v q* expanded via the cross-product form.
    const Vec3 q{x_, y_, z_};
    const Vec3 t = cross(q, v) * 2.0;
    return v + t * w_ + cross(q, t);
  }

  // Column i of the equivalent rotation matrix.
  Vec3 axis(int i) const {
    switch (i) {
      case 0:
        return rotate({1.0, 0.0, 0.0});
      case 1:
        return rotate({0.0, 1.0, 0.0});
      case 2:
        return rotate({0.0, 0.0, 1.0});
      default:
        throw Error("rotation axis index must be 0, 1, or 2");
    }
  }

  std::array<std::array<double, 3>, 3> matrix() const {
    const Vec3 c0 = axis(0), c1 = axis(1), c2 = axis(2);
    return {{{c0.x, c1.x, c2.x}, {c0.y, c1.y, c2.y}, {c0.z, c1.z, c2.z}}};
  }

  // Builds a rotation from a matrix given in row-major rows.  The matrix must
  // be orthonormal with determinant +1 within `tol`.
  static Rotation from_matrix(const std::array<std::array<double, 3>, 3>& m,
                              double tol = 1e-6) {
    const Vec3 c0{m[0][0], m[1][0], m[2][0]};
    const Vec3 c1{m[0][1], m[1][1], m[2][1]};
    const Vec3 c2{m[0][2], m[1][2], m[2][2]};
    const double det = dot(c0, cross(c1, c2));
    if (std::abs(c0.norm() - 1.0) > tol || std::abs(c1.norm() - 1.0) > tol ||
        std::abs(c2.norm() - 1.0) > tol || std::abs(dot(c0, c1)) > tol ||
        std::abs(dot(c0, c2)) > tol || std::abs(dot(c1, c2)) > tol ||
        std::abs(det - 1.0) > tol) {
      throw Error("matrix is not a rotation (orthonormal, det +1)");
    }
    // Shepperd's method: pick the largest diagonal combination for stability.
    const double trace = m[0][0] + m[1][1] + m[2][2];
    double w, x, y, z;
    if (trace > 0.0) {
      const double s = std::sqrt(trace + 1.0) * 2.0;
      w = 0.25 * s;
      x = (m[2][1] - m[1][2]) / s;
      y = (m[0][2] - m[2][0]) / s;
      z = (m[1][0] - m[0][1]) / s;
    } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
      const double s = std::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2.0;
      w = (m[2][1] - m[1][2]) / s;
      x = 0.25 * s;
      y = (m[0][1] + m[1][0]) / s;
      z = (m[0][2] + m[2][0]) / s;
    } else if (m[1][1] > m[2][2]) {
      const double s = std::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2.0;
      w = (m[0][2] - m[2][0]) / s;
      x = (m[0][1] + m[1][0]) / s;
      y = 0.25 * s;
      z = (m[1][2] + m[2][1]) / s;
    } else {
      const double s = std::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2.0;
      w = (m[1][0] - m[0][1]) / s;
      x = (m[0][2] + m[2][0]) / s;
      y = (m[1][2] + m[2][1]) / s;
      z = 0.25 * s;
    }
    return Rotation(w, x, y, z);
  }

 private:
  friend Rotation slerp(const Rotation&, const Rotation&, double);

  void canonicalize() {
    const bool flip = w_ < 0.0 ||
                      (w_ == 0.0 && (x_ < 0.0 || (x_ == 0.0 && (y_ < 0.0 ||
                       (y_ == 0.0 && z_ < 0.0)))));
    if (flip) {
      w_ = -w_;
      x_ = -x_;
      y_ = -y_;
      z_ = -z_;
    }
  }

  void renormalize() {
    const double n = std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_);
    w_ /= n;
    x_ /= n;
    y_ /= n;
    z_ /= n;
    canonicalize();
  }

  double w_, x_, y_, z_;
};

// Geodesic distance on SO(3): the smaller rotation angle between a and b,
// in [0, pi].  Symmetric, zero iff a == b, satisfies the triangle inequality.
inline double rotation_geodesic(const Rotation& a, const Rotation& b) {
  const Rotation rel = a.inverse() * b;
  const double vn =
      std::sqrt(rel.x() * rel.x() + rel.y() * rel.y() + rel.z() * rel.z());
  return 2.0 * std::atan2(vn, std::abs(rel.w()));
}

inline Rotation slerp(const Rotation& a, const Rotation& b, double t) {
  double cos_half = a.w_ * b.w_ + a.x_ * b.x_ + a.y_ * b.y_ + a.z_ * b.z_;
  double sign = 1.0;
  if (cos_half < 0.0) {
    cos_half = -cos_half;
    sign = -1.0;
  }
  double wa, wb;
  if (cos_half > 1.0 - 1e-10) {
    wa = 1.0 - t;
    wb = t;
  } else {
    const double half = std::acos(cos_half);
    const double s = std::sin(half);
    wa = std::sin((1.0 - t) * half) / s;
    wb = std::sin(t * half) / s;
  }
  wb *= sign;
  return Rotation(wa * a.w_ + wb * b.w_, wa * a.x_ + wb * b.x_,
                  wa * a.y_ + wb * b.y_, wa * a.z_ + wb * b.z_);
}

struct Pose {
  Rotation rotation;
  Vec3 translation;

  Pose() = default;
  Pose(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}

  static Pose identity() { return Pose(); }
};

// compose(a, b): the transform that applies b first, then a.
inline Pose pose_compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation * b.rotation,
              a.rotation.rotate(b.translation) + a.translation);
}

inline Pose pose_inverse(const Pose& p) {
  const Rotation rinv = p.rotation.inverse();
  return Pose(rinv, -rinv.rotate(p.translation));
}

inline Point3 transform_point(const Pose& p, const Point3& x) {
  return p.rotation.rotate(x) + p.translation;
}

inline Pose interpolate(const Pose& a, const Pose& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw Error("interpolation parameter must lie in [0, 1]");
  }
  return Pose(slerp(a.rotation, b.rotation, t),
              a.translation * (1.0 - t) + b.translation * t);
}

inline bool rotation_approx_equal(const Rotation& a, const Rotation& b,
                                  double tol = 1e-9) {
  return rotation_geodesic(a, b) <= tol;
}

inline bool pose_approx_equal(const Pose& a, const Pose& b,
                              double tol = 1e-9) {
  return (a.translation - b.translation).norm() <= tol &&
         rotation_geodesic(a.rotation, b.rotation) <= tol;
}

enum class Gripper { open, close, hold };

inline const char* gripper_name(Gripper g) {
  switch (g) {
    case Gripper::open:
      return "open";
    case Gripper::close:
      return "close";
    case Gripper::hold:
      return "hold";
  }
  throw Error("invalid gripper value");
}

inline Gripper gripper_from_name(const std::string& name) {
  if (name == "open") return Gripper::open;
  if (name == "close") return Gripper::close;
  if (name == "hold") return Gripper::hold;
  throw ParseError("unknown gripper command '" + name + "'");
}

struct Waypoint {
  Pose pose;
  Gripper gripper = Gripper::hold;
};

struct Trajectory {
  std::vector<Waypoint> waypoints;
  int stage_index = 1;
};

inline double path_length(const Trajectory& traj) {
  double total = 0.0;
  for (std::size_t i = 1; i < traj.waypoints.size(); ++i) {
    total += (traj.waypoints[i].pose.translation -
              traj.waypoints[i - 1].pose.translation)
                 .norm();
  }
  return total;
}

// Axis-aligned box, used for workspace limits.
struct Aabb {
  Vec3 min;
  Vec3 max;

  bool contains(const Point3& p, double margin = 0.0) const {
    return p.x >= min.x + margin && p.x <= max.x - margin &&
           p.y >= min.y + margin && p.y <= max.y - margin &&
           p.z >= min.z + margin && p.z <= max.z - margin;
  }

  Point3 clamp(const Point3& p, double margin = 0.0) const {
    auto clip = [](double v, double lo, double hi) {
      return v < lo ? lo : (v > hi ? hi : v);
    };
    return {clip(p.x, min.x + margin, max.x - margin),
            clip(p.y, min.y + margin, max.y - margin),
            clip(p.z, min.z + margin, max.z - margin)};
  }
};

// Box centered at a pose, with half-extents along the pose's local axes.
struct OrientedBox {
  Pose pose;
  Vec3 half;

  // Axis-aligned bounds of the rotated box.
  Aabb bounds() const {
    const auto m = pose.rotation.matrix();
    const Vec3 wh{std::abs(m[0][0]) * half.x + std::abs(m[0][1]) * half.y +
                      std::abs(m[0][2]) * half.z,
                  std::abs(m[1][0]) * half.x + std::abs(m[1][1]) * half.y +
                      std::abs(m[1][2]) * half.z,
                  std::abs(m[2][0]) * half.x + std::abs(m[2][1]) * half.y +
                      std::abs(m[2][2]) * half.z};
    return {pose.translation - wh, pose.translation + wh};
  }

  // Euclidean distance from p to the box surface; 0 inside.
  double distance(const Point3& p) const {
    const Point3 local = transform_point(pose_inverse(pose), p);
    auto excess = [](double v, double h) {
      const double d = std::abs(v) - h;
      return d > 0.0 ? d : 0.0;
    };
    const Vec3 e{excess(local.x, half.x), excess(local.y, half.y),
                 excess(local.z, half.z)};
    return e.norm();
  }

  bool contains(const Point3& p, double margin = 0.0) const {
    const Point3 local = transform_point(pose_inverse(pose), p);
    return std::abs(local.x) <= half.x + margin &&
           std::abs(local.y) <= half.y + margin &&
           std::abs(local.z) <= half.z + margin;
  }
};

}  // namespace trex
