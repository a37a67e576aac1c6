#pragma once

#include <cmath>

#include <Eigen/Geometry>

#include "rcm/errors.hpp"

namespace rcm {

// Lengths in meters, angles in radians, everything in the robot base frame
// unless a name says otherwise.
using Vec3 = Eigen::Vector3d;

/// Unit quaternion, scalar-first (w, x, y, z) when serialized.
using Rotation = Eigen::Quaterniond;

struct Pose {
  Vec3 position = Vec3::Zero();
  Rotation orientation = Rotation::Identity();

  static Pose identity() { return {}; }
  static Pose translation(const Vec3& t) { return {t, Rotation::Identity()}; }
};

/// Linear + angular velocity of a rigid body, both in the base frame.
struct Twist {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
};

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

inline Vec3 cross(const Vec3& a, const Vec3& b) { return a.cross(b); }

inline Vec3 rotate(const Rotation& r, const Vec3& v) { return r * v; }

/// Distance from `point` to the infinite line through `line_origin` along `line_dir`.
/// `line_dir` must be unit length (within 1e-9).
inline double point_to_line_distance(const Vec3& point, const Vec3& line_origin,
                                     const Vec3& line_dir) {
  if (!(std::abs(line_dir.norm() - 1.0) <= 1e-9)) {
    throw Error(Errc::invalid_argument, "point_to_line_distance: line direction is not unit length");
  }
  const Vec3 rel = point - line_origin;
  return (rel - rel.dot(line_dir) * line_dir).norm();
}

inline Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.position = a.position + a.orientation * b.position;
  out.orientation = (a.orientation * b.orientation).normalized();
  return out;
}

inline Pose inverse(const Pose& a) {
  Pose out;
  out.orientation = a.orientation.conjugate();
  out.position = -(out.orientation * a.position);
  return out;
}

/// Exponential map: rotation by |rotvec| radians about rotvec / |rotvec|.
inline Rotation exp_rotation(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-300) {
    return Rotation::Identity();
  }
  return Rotation(Eigen::AngleAxisd(angle, rotvec / angle));
}

}  // namespace rcm
