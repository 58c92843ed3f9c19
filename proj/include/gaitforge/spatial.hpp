#pragma once

// Spatial vectors are stored (angular; linear) and expressed in world
// coordinates at the world origin.

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gaitforge {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Motion cross product v x m.
inline Vector6d cross_motion(const Vector6d& v, const Vector6d& m) {
  const Eigen::Vector3d w = v.head<3>(), vl = v.tail<3>();
  Vector6d out;
  out.head<3>() = w.cross(m.head<3>());
  out.tail<3>() = w.cross(m.tail<3>()) + vl.cross(m.head<3>());
  return out;
}

/// Force cross product v x* f.
inline Vector6d cross_force(const Vector6d& v, const Vector6d& f) {
  const Eigen::Vector3d w = v.head<3>(), vl = v.tail<3>();
  Vector6d out;
  out.head<3>() = w.cross(f.head<3>()) + vl.cross(f.tail<3>());
  out.tail<3>() = w.cross(f.tail<3>());
  return out;
}

/// Spatial inertia of a body with mass m, world COM c and world rotational
/// inertia ic about the COM.
inline Matrix6d spatial_inertia(double m, const Eigen::Vector3d& c, const Eigen::Matrix3d& ic) {
  const Eigen::Matrix3d cx = skew(c);
  Matrix6d out;
  out.topLeftCorner<3, 3>() = ic + m * cx * cx.transpose();
  out.topRightCorner<3, 3>() = m * cx;
  out.bottomLeftCorner<3, 3>() = m * cx.transpose();
  out.bottomRightCorner<3, 3>() = m * Eigen::Matrix3d::Identity();
  return out;
}

/// Linear velocity of the world point x moving with spatial velocity v.
inline Eigen::Vector3d point_velocity(const Vector6d& v, const Eigen::Vector3d& x) {
  return v.tail<3>() + v.head<3>().cross(x);
}

inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& r) {
  const double angle = r.norm();
  if (angle < 1e-300) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, r / angle).toRotationMatrix();
}

inline Eigen::Vector3d log_so3(const Eigen::Matrix3d& rot) {
  const Eigen::AngleAxisd aa(rot);
  return aa.angle() * aa.axis();
}

}  // namespace gaitforge
