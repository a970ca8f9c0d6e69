#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>

namespace mrlc {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Matrix4 = Eigen::Matrix4d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// Tangent vector of SE(3), ordered [rotation; translation].
using Twist = Eigen::Matrix<double, 6, 1>;

/// Skew-symmetric matrix such that hat(a) * b == a.cross(b).
Matrix3 hat(const Vector3& v);

/// Element of SO(3) stored as a unit quaternion.
///
/// Products track how many compositions happened since the last
/// renormalization and renormalize every 64 of them.
class Rotation {
 public:
  Rotation() = default;
  explicit Rotation(const Eigen::Quaterniond& q);

  static Rotation from_matrix(const Matrix3& m);
  static Rotation exp(const Vector3& omega);

  /// Rotation vector with angle in [0, pi]. When the angle rounds to pi the
  /// axis sign is fixed so that its first non-zero component is positive.
  Vector3 log() const;

  Rotation inverse() const;
  Rotation operator*(const Rotation& other) const;
  Vector3 operator*(const Vector3& v) const { return q_ * v; }

  Matrix3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  /// Rotation angle in [0, pi].
  double angle() const;

  bool operator==(const Rotation& other) const { return q_.coeffs() == other.q_.coeffs(); }

 private:
  static constexpr std::uint8_t kRenormalizePeriod = 64;

  Eigen::Quaterniond q_ = Eigen::Quaterniond::Identity();
  std::uint8_t compositions_ = 0;
};

/// Rigid body transform: rotation plus metric translation.
class Pose {
 public:
  Pose() = default;
  Pose(const Rotation& rotation, const Vector3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose identity() { return Pose(); }
  static Pose from_matrix(const Matrix4& m);

  const Rotation& rotation() const { return rotation_; }
  const Vector3& translation() const { return translation_; }

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vector3 operator*(const Vector3& p) const { return rotation_ * p + translation_; }

  Matrix4 matrix() const;

  bool operator==(const Pose& other) const {
    return rotation_ == other.rotation_ && translation_ == other.translation_;
  }

 private:
  Rotation rotation_;
  Vector3 translation_ = Vector3::Zero();
};

Pose compose(const Pose& a, const Pose& b);

/// inverse(a) * b
Pose between(const Pose& a, const Pose& b);

Pose exp(const Twist& xi);
Twist log(const Pose& p);

/// Adj(p) with exp(Adj(p) * xi) == p * exp(xi) * inverse(p).
Matrix6 adjoint(const Pose& p);

/// P (+) xi = P * exp(xi)
Pose retract(const Pose& p, const Twist& xi);

/// Right Jacobian of SE(3) and its inverse:
///   exp(xi + d) ~= exp(xi) * exp(Jr(xi) * d)
///   log(exp(xi) * exp(d)) ~= xi + Jr^{-1}(xi) * d
Matrix6 right_jacobian(const Twist& xi);
Matrix6 right_jacobian_inverse(const Twist& xi);

/// Norm of log(b^{-1} a); the distance used by the group-axiom checks.
double tangent_distance(const Pose& a, const Pose& b);

}  // namespace mrlc
