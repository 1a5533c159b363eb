#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace dvopt {

// Angle below which rotation formulas switch to their Taylor expansions.
constexpr double kSmallAngle = 1e-8;

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline Eigen::Vector3d vee(const Eigen::Matrix3d& m) {
  return {m(2, 1), m(0, 2), m(1, 0)};
}

// Rodrigues formula: rotation matrix of an axis-angle vector.
inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Eigen::Matrix3d w = skew(omega);
  double a, b;
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Eigen::Matrix3d::Identity() + a * w + b * (w * w);
}

// Axis-angle vector of a rotation matrix. Valid for angles in [0, pi]; the
// branch near pi recovers the axis from the symmetric part.
inline Eigen::Vector3d log_so3(const Eigen::Matrix3d& r) {
  const double cos_theta =
      std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Eigen::Vector3d v = vee(r - r.transpose()) * 0.5;  // sin(theta) * axis
  if (theta < kSmallAngle) {
    return v;  // first order: omega ~ vee(R - R^T) / 2
  }
  if (theta < M_PI - 1e-3) {
    return (theta / std::sin(theta)) * v;
  }
  // Near pi the antisymmetric part vanishes; use R + I ~ 2 a a^T.
  const Eigen::Matrix3d b = (r + Eigen::Matrix3d::Identity()) * 0.5;
  int k = 0;
  if (b(1, 1) > b(k, k)) k = 1;
  if (b(2, 2) > b(k, k)) k = 2;
  Eigen::Vector3d axis;
  axis[k] = std::sqrt(std::max(b(k, k), 0.0));
  for (int j = 0; j < 3; ++j) {
    if (j != k) axis[j] = b(k, j) / axis[k];
  }
  axis.normalize();
  if (axis.dot(v) < 0.0) axis = -axis;
  return theta * axis;
}

// Left Jacobian of SO(3): integrates a body rotation into a global one.
inline Eigen::Matrix3d left_jacobian(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Eigen::Matrix3d w = skew(omega);
  double b, c;
  if (theta < kSmallAngle) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Eigen::Matrix3d::Identity() + b * w + c * (w * w);
}

inline Eigen::Matrix3d left_jacobian_inv(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Eigen::Matrix3d w = skew(omega);
  double c;
  if (theta < kSmallAngle) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    c = 1.0 / theta2 -
        (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Eigen::Matrix3d::Identity() - 0.5 * w + c * (w * w);
}

inline Eigen::Matrix3d right_jacobian(const Eigen::Vector3d& omega) {
  return left_jacobian(-omega);
}

inline Eigen::Matrix3d right_jacobian_inv(const Eigen::Vector3d& omega) {
  return left_jacobian_inv(-omega);
}

// Rigid transform X_out = R * X_in + t. A pose named P_ab maps coordinates
// of frame a into coordinates of frame b.
struct PoseSE3 {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  PoseSE3() = default;
  PoseSE3(const Eigen::Matrix3d& r, const Eigen::Vector3d& t_) : R(r), t(t_) {}

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return R * x + t; }

  PoseSE3 inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

  // Max abs deviation of R^T R from identity.
  double orthonormality_drift() const {
    return (R.transpose() * R - Eigen::Matrix3d::Identity())
        .cwiseAbs()
        .maxCoeff();
  }

  // Projects R back onto SO(3) via SVD (nearest rotation).
  void orthonormalize() {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(
        R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) {
      u.col(2) = -u.col(2);
    }
    R = u * v.transpose();
  }
};

// Composition along a frame chain: given P_ab and P_bc, returns P_ac.
// The result is re-orthonormalized when accumulated drift exceeds 1e-9.
inline PoseSE3 pose_compose(const PoseSE3& p_ab, const PoseSE3& p_bc) {
  PoseSE3 p_ac(p_bc.R * p_ab.R, p_bc.R * p_ab.t + p_bc.t);
  if (p_ac.orthonormality_drift() > 1e-9) {
    p_ac.orthonormalize();
  }
  return p_ac;
}

inline PoseSE3 pose_inverse(const PoseSE3& p) { return p.inverse(); }

// se(3) element: rotation part is an axis-angle vector, translation part is
// the body-frame translation integrated through the left Jacobian.
struct Twist {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

inline PoseSE3 se3_exp(const Twist& xi) {
  return {exp_so3(xi.rotation), left_jacobian(xi.rotation) * xi.translation};
}

inline Twist se3_log(const PoseSE3& p) {
  Twist xi;
  xi.rotation = log_so3(p.R);
  xi.translation = left_jacobian_inv(xi.rotation) * p.t;
  return xi;
}

// Rotation angle of R in radians, from the trace with a clamped arccosine.
inline double rotation_angle(const Eigen::Matrix3d& r) {
  return std::acos(std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0));
}

// Quaternion (x, y, z, w) to rotation matrix. The input is normalized first;
// quaternions appear only at serialization boundaries.
inline Eigen::Matrix3d quat_to_rot(double qx, double qy, double qz, double qw) {
  const double n = std::sqrt(qx * qx + qy * qy + qz * qz + qw * qw);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("quat_to_rot: quaternion norm must be positive");
  }
  const double x = qx / n, y = qy / n, z = qz / n, w = qw / n;
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
      2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
      2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return r;
}

// Rotation matrix to unit quaternion (x, y, z, w) with w >= 0, using the
// largest-diagonal branch for conditioning.
inline Eigen::Vector4d rot_to_quat(const Eigen::Matrix3d& r) {
  Eigen::Vector4d q;  // (x, y, z, w)
  const double tr = r.trace();
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q << (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
        (r(1, 0) - r(0, 1)) / s, 0.25 * s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q << 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s,
        (r(2, 1) - r(1, 2)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q << (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s,
        (r(0, 2) - r(2, 0)) / s;
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q << (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s,
        (r(1, 0) - r(0, 1)) / s;
  }
  q.normalize();
  if (q[3] < 0.0) q = -q;
  return q;
}

}  // namespace dvopt
