#pragma once

// SO(3) arithmetic and the composition operators of the filter state.
//
// Rotations are stored as unit quaternions and exposed as matrices. All
// perturbations act from the left: R' = exp(hat(tau)) * R.

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace physekf {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

using TangentVector3 = Vec3;

/// Local coordinates of a FilterState, ordered [dp, dR, dv, dw, dtheta].
using TangentVector13 = Eigen::Matrix<double, 13, 1>;

namespace idx {
inline constexpr int kP = 0;
inline constexpr int kR = 3;
inline constexpr int kV = 6;
inline constexpr int kW = 9;
inline constexpr int kTheta = 12;
}  // namespace idx

inline Mat3 hat(const Vec3& t) {
  Mat3 m;
  m << 0.0, -t.z(), t.y(),
       t.z(), 0.0, -t.x(),
       -t.y(), t.x(), 0.0;
  return m;
}

/// Element of SO(3). Internally a unit quaternion with non-negative scalar part.
class Rotation {
 public:
  Rotation() : q_(Quat::Identity()) {}

  explicit Rotation(const Mat3& m) : q_(m) { canonicalize(); }

  static Rotation from_quaternion(const Quat& q) {
    Rotation r;
    r.q_ = q;
    r.canonicalize();
    return r;
  }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Quat& quaternion() const { return q_; }

  Rotation inverse() const { return from_quaternion(q_.conjugate()); }

  Rotation operator*(const Rotation& o) const { return from_quaternion(q_ * o.q_); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  bool operator==(const Rotation& o) const { return q_.coeffs() == o.q_.coeffs(); }

 private:
  void canonicalize() {
    q_.normalize();
    if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
  }

  Quat q_;
};

inline Rotation exp_so3(const Vec3& tau) {
  const double theta2 = tau.squaredNorm();
  const double theta = std::sqrt(theta2);
  double w;
  double k;  // sin(theta/2) / theta
  if (theta < 1e-8) {
    w = 1.0 - theta2 / 8.0;
    k = 0.5 - theta2 / 48.0;
  } else {
    w = std::cos(0.5 * theta);
    k = std::sin(0.5 * theta) / theta;
  }
  return Rotation::from_quaternion(Quat(w, k * tau.x(), k * tau.y(), k * tau.z()));
}

/// Principal axis-angle vector, norm in [0, pi].
inline Vec3 log_so3(const Rotation& r) {
  const Quat& q = r.quaternion();  // w >= 0
  const Vec3 v = q.vec();
  const double sn = v.norm();
  if (sn < 1e-8) {
    // angle = 2 sn / w to first order; include the cubic term of atan.
    const double w = q.w();
    return (2.0 / w) * (1.0 - sn * sn / (3.0 * w * w)) * v;
  }
  const double angle = 2.0 * std::atan2(sn, q.w());
  return (angle / sn) * v;
}

inline Vec3 log_so3(const Mat3& m) { return log_so3(Rotation(m)); }

/// Rotation angle between two rotations, in [0, pi].
inline double rotation_angle_between(const Rotation& a, const Rotation& b) {
  return log_so3(a * b.inverse()).norm();
}

struct Pose {
  Vec3 p = Vec3::Zero();
  Rotation R;
};

/// Filter mean: position and linear velocity in world frame, angular velocity
/// as the spatial rate that drives R' = exp(w dt) R, and the friction parameter
/// theta with mu = theta^2.
struct FilterState {
  Vec3 p = Vec3::Zero();
  Rotation R;
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  double theta = 0.0;

  Pose pose() const { return {p, R}; }
  double mu() const { return theta * theta; }
};

/// Left-multiplies by exp(tau); an exactly zero tau returns r unchanged.
inline Rotation perturb_left(const Rotation& r, const Vec3& tau) {
  if ((tau.array() == 0.0).all()) return r;
  return exp_so3(tau) * r;
}

inline FilterState state_boxplus(const FilterState& s, const TangentVector13& e) {
  FilterState out;
  out.p = s.p + e.segment<3>(idx::kP);
  out.R = perturb_left(s.R, e.segment<3>(idx::kR));
  out.v = s.v + e.segment<3>(idx::kV);
  out.w = s.w + e.segment<3>(idx::kW);
  out.theta = s.theta + e(idx::kTheta);
  return out;
}

inline TangentVector13 state_boxminus(const FilterState& a, const FilterState& b) {
  TangentVector13 e;
  e.segment<3>(idx::kP) = a.p - b.p;
  e.segment<3>(idx::kR) = log_so3(a.R * b.R.inverse());
  e.segment<3>(idx::kV) = a.v - b.v;
  e.segment<3>(idx::kW) = a.w - b.w;
  e(idx::kTheta) = a.theta - b.theta;
  return e;
}

inline Pose pose_oplus(const Pose& x, const Vec6& d) {
  return {x.p + d.head<3>(), perturb_left(x.R, d.tail<3>())};
}

inline Vec6 pose_ominus(const Pose& a, const Pose& b) {
  Vec6 d;
  d.head<3>() = a.p - b.p;
  d.tail<3>() = log_so3(a.R * b.R.inverse());
  return d;
}

}  // namespace physekf
