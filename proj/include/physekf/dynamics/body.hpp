#pragma once

#include <memory>
#include <vector>

#include "physekf/dynamics/geometry.hpp"
#include "physekf/liegroup.hpp"

namespace physekf {

/// Angular rate w (spatial, drives R' = exp(w dt) R) and linear velocity v of the centre of mass.
struct Twist {
  Vec3 w = Vec3::Zero();
  Vec3 v = Vec3::Zero();

  Vec6 stacked() const {
    Vec6 x;
    x << w, v;
    return x;
  }
  static Twist from_stacked(const Vec6& x) { return {x.head<3>(), x.tail<3>()}; }
};

struct Wrench {
  Vec3 torque = Vec3::Zero();
  Vec3 force = Vec3::Zero();
};

struct RigidBody {
  double mass = 1.0;
  Mat3 inertia_body = Mat3::Identity();  // about the centre of mass, body frame
  std::shared_ptr<const Shape> shape;
  Pose pose;
  Twist twist;
  /// Coefficient this body contributes to its friction pairs. Against a plane
  /// the combined coefficient is plane.friction * friction.
  double friction = 1.0;

  Mat3 inertia_world() const {
    const Mat3 R = pose.R.matrix();
    return R * inertia_body * R.transpose();
  }

  Vec3 point_velocity(const Vec3& x) const { return twist.v + twist.w.cross(x - pose.p); }
};

inline RigidBody make_body(Shape shape, double mass) {
  if (!(mass > 0.0)) throw InvalidInput("body mass must be positive");
  RigidBody b;
  b.mass = mass;
  b.inertia_body = shape_inertia(shape, mass);
  b.shape = std::make_shared<const Shape>(std::move(shape));
  return b;
}

}  // namespace physekf
