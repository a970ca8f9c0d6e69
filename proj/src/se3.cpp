#include "mrlc/se3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mrlc {

namespace {

// Below this angle the trigonometric coefficients switch to Taylor series.
constexpr double kSeriesAngle = 0.05;

Matrix3 so3_left_jacobian(const Vector3& omega) {
  const double theta = omega.norm();
  const Matrix3 w = hat(omega);
  double a;
  double b;
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  } else {
    a = (1.0 - std::cos(theta)) / (theta * theta);
    b = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  return Matrix3::Identity() + a * w + b * w * w;
}

Matrix3 so3_left_jacobian_inverse(const Vector3& omega) {
  const double theta = omega.norm();
  const Matrix3 w = hat(omega);
  double c;
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    c = 1.0 / (theta * theta) - 1.0 / (2.0 * theta * std::tan(0.5 * theta));
  }
  return Matrix3::Identity() - 0.5 * w + c * w * w;
}

// Off-diagonal block of the SE(3) left Jacobian (translation row, rotation
// column) for tangent [phi; rho].
Matrix3 se3_left_jacobian_q(const Vector3& phi, const Vector3& rho) {
  const double theta = phi.norm();
  const Matrix3 p = hat(phi);
  const Matrix3 r = hat(rho);
  double a;
  double b;
  double c;
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    const double t4 = t2 * t2;
    a = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0;
    b = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0;
    c = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0;
  } else {
    const double s = std::sin(theta);
    const double co = std::cos(theta);
    const double t2 = theta * theta;
    const double t4 = t2 * t2;
    a = (theta - s) / (t2 * theta);
    b = (t2 + 2.0 * co - 2.0) / (2.0 * t4);
    c = (2.0 * theta - 3.0 * s + theta * co) / (2.0 * t4 * theta);
  }
  const Matrix3 pr = p * r;
  const Matrix3 rp = r * p;
  const Matrix3 prp = pr * p;
  return 0.5 * r + a * (pr + rp + prp) + b * (p * pr + rp * p - 3.0 * prp) +
         c * (prp * p + p * prp);
}

Eigen::Quaterniond normalized_if_needed(const Eigen::Quaterniond& q) {
  if (std::abs(q.squaredNorm() - 1.0) > 1e-14) return q.normalized();
  return q;
}

}  // namespace

Matrix3 hat(const Vector3& v) {
  Matrix3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Rotation

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(normalized_if_needed(q)) {}

Rotation Rotation::from_matrix(const Matrix3& m) {
  return Rotation(Eigen::Quaterniond(m).normalized());
}

Rotation Rotation::exp(const Vector3& omega) {
  const double theta = omega.norm();
  const double half = 0.5 * theta;
  double k;  // sin(theta / 2) / theta
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    k = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
  } else {
    k = std::sin(half) / theta;
  }
  Eigen::Quaterniond q(std::cos(half), k * omega.x(), k * omega.y(), k * omega.z());
  return Rotation(q);
}

Vector3 Rotation::log() const {
  Eigen::Quaterniond q = q_;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  Vector3 v = q.vec();
  const double n = v.norm();
  const double w = q.w();
  if (n < 1e-10) {
    // 2 * atan2(n, w) / n, expanded around n = 0.
    return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v;
  }
  const double theta = 2.0 * std::atan2(n, w);
  if (theta == std::numbers::pi) {
    // Angle is pi to double precision: pick the axis whose first non-zero
    // component is positive.
    for (int i = 0; i < 3; ++i) {
      if (v[i] != 0.0) {
        if (v[i] < 0.0) v = -v;
        break;
      }
    }
  }
  return (theta / n) * v;
}

Rotation Rotation::inverse() const {
  Rotation r;
  r.q_ = q_.conjugate();
  r.compositions_ = compositions_;
  return r;
}

Rotation Rotation::operator*(const Rotation& other) const {
  Rotation r;
  r.q_ = q_ * other.q_;
  const int count = std::max(compositions_, other.compositions_) + 1;
  if (count >= kRenormalizePeriod) {
    r.q_.normalize();
    r.compositions_ = 0;
  } else {
    r.compositions_ = static_cast<std::uint8_t>(count);
  }
  return r;
}

double Rotation::angle() const {
  const double w = std::abs(q_.w());
  return 2.0 * std::atan2(q_.vec().norm(), w);
}

// ---------------------------------------------------------------------------
// Pose

Pose Pose::from_matrix(const Matrix4& m) {
  return Pose(Rotation::from_matrix(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>());
}

Pose Pose::inverse() const {
  const Rotation r_inv = rotation_.inverse();
  return Pose(r_inv, -(r_inv * translation_));
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
}

Matrix4 Pose::matrix() const {
  Matrix4 m = Matrix4::Identity();
  m.topLeftCorner<3, 3>() = rotation_.matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose compose(const Pose& a, const Pose& b) { return a * b; }

Pose between(const Pose& a, const Pose& b) { return a.inverse() * b; }

Pose exp(const Twist& xi) {
  const Vector3 omega = xi.head<3>();
  const Vector3 rho = xi.tail<3>();
  return Pose(Rotation::exp(omega), so3_left_jacobian(omega) * rho);
}

Twist log(const Pose& p) {
  const Vector3 omega = p.rotation().log();
  Twist xi;
  xi.head<3>() = omega;
  xi.tail<3>() = so3_left_jacobian_inverse(omega) * p.translation();
  return xi;
}

Matrix6 adjoint(const Pose& p) {
  const Matrix3 r = p.rotation().matrix();
  Matrix6 adj = Matrix6::Zero();
  adj.topLeftCorner<3, 3>() = r;
  adj.bottomRightCorner<3, 3>() = r;
  adj.bottomLeftCorner<3, 3>() = hat(p.translation()) * r;
  return adj;
}

Pose retract(const Pose& p, const Twist& xi) { return p * exp(xi); }

Matrix6 right_jacobian(const Twist& xi) {
  // Jr(xi) = Jl(-xi)
  const Vector3 phi = -xi.head<3>();
  const Vector3 rho = -xi.tail<3>();
  const Matrix3 j = so3_left_jacobian(phi);
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j;
  out.bottomRightCorner<3, 3>() = j;
  out.bottomLeftCorner<3, 3>() = se3_left_jacobian_q(phi, rho);
  return out;
}

Matrix6 right_jacobian_inverse(const Twist& xi) {
  const Vector3 phi = -xi.head<3>();
  const Vector3 rho = -xi.tail<3>();
  const Matrix3 j_inv = so3_left_jacobian_inverse(phi);
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = j_inv;
  out.bottomRightCorner<3, 3>() = j_inv;
  out.bottomLeftCorner<3, 3>() = -j_inv * se3_left_jacobian_q(phi, rho) * j_inv;
  return out;
}

double tangent_distance(const Pose& a, const Pose& b) { return log(between(b, a)).norm(); }

}  // namespace mrlc
