#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gazesynth {

inline Eigen::Matrix3d skew_matrix(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Rotation vector to unit quaternion.
inline Eigen::Quaterniond so3_exp(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
    return q.normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(theta, w / theta));
}

inline Eigen::Vector3d so3_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const double s = q.vec().norm();
  if (s < 1e-12) return 2.0 * q.vec();
  const double theta = 2.0 * std::atan2(s, q.w());
  return theta * q.vec() / s;
}

/// Angle between two nonzero vectors, accurate near 0 and pi.
inline double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Angular distance between two rotations in radians.
inline double rotation_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return so3_log(a.conjugate() * b).norm();
}

}  // namespace gazesynth
