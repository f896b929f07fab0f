#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "physekf/liegroup.hpp"

using namespace physekf;

namespace {

// Uniform rotation via Shoemake's subgroup algorithm, independent of exp_so3.
Mat3 random_rotation_matrix(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const Quat q(std::sqrt(u1) * std::cos(2 * M_PI * u3), std::sqrt(1 - u1) * std::sin(2 * M_PI * u2),
               std::sqrt(1 - u1) * std::cos(2 * M_PI * u2), std::sqrt(u1) * std::sin(2 * M_PI * u3));
  return q.normalized().toRotationMatrix();
}

Vec3 random_ball(std::mt19937_64& rng, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 d(n(rng), n(rng), n(rng));
  return d.normalized() * max_norm * std::cbrt(u(rng));
}

FilterState random_state(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  FilterState s;
  s.p = Vec3(n(rng), n(rng), n(rng));
  s.R = Rotation(random_rotation_matrix(rng));
  s.v = Vec3(n(rng), n(rng), n(rng));
  s.w = Vec3(n(rng), n(rng), n(rng));
  s.theta = n(rng);
  return s;
}

}  // namespace

TEST(Hat, ZeroAndBasis) {
  EXPECT_TRUE(hat(Vec3::Zero()).isZero(0.0));
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 0;
  EXPECT_TRUE(hat(Vec3(0, 0, 1)).isApprox(expected));
}

TEST(Hat, AntisymmetricAndCross) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 t(n(rng), n(rng), n(rng));
    const Vec3 y(n(rng), n(rng), n(rng));
    EXPECT_TRUE((hat(t) + hat(t).transpose()).isZero(0.0));
    EXPECT_LT((hat(t) * y - t.cross(y)).norm(), 1e-12);
  }
}

TEST(ExpSo3, IdentityAndQuarterTurn) {
  EXPECT_TRUE(exp_so3(Vec3::Zero()).matrix().isApprox(Mat3::Identity()));
  const Vec3 y = exp_so3(Vec3(0, 0, M_PI / 2)) * Vec3(1, 0, 0);
  EXPECT_LT((y - Vec3(0, 1, 0)).norm(), 1e-12);
}

TEST(ExpSo3, SmallAngleBranchMatchesRodrigues) {
  const Vec3 t(3e-9, -2e-9, 1e-9);
  const Mat3 K = hat(t);
  const Mat3 rodrigues = Mat3::Identity() + K + 0.5 * K * K;
  EXPECT_LT((exp_so3(t).matrix() - rodrigues).norm(), 1e-15);
}

TEST(ExpSo3, OutputIsRotation) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Mat3 R = exp_so3(random_ball(rng, 10.0)).matrix();
    EXPECT_LT((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-9);
  }
}

TEST(LogSo3, IdentityAndPiBoundary) {
  EXPECT_TRUE(log_so3(Mat3::Identity()).isZero(0.0));
  Mat3 rx;
  rx << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  EXPECT_LT((log_so3(rx) - Vec3(M_PI, 0, 0)).norm(), 1e-9);
}

TEST(LogSo3, NearPiStaysAccurate) {
  const Vec3 axis = Vec3(1, 2, -1).normalized();
  for (double eps : {1e-3, 1e-6, 1e-8}) {
    const Vec3 t = (M_PI - eps) * axis;
    EXPECT_LT((log_so3(exp_so3(t).matrix()) - t).norm(), 1e-9) << eps;
  }
}

TEST(LogSo3, RoundTrips) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 Q = random_rotation_matrix(rng);
    EXPECT_LT((exp_so3(log_so3(Q)).matrix() - Q).norm(), 1e-9);
    const Vec3 t = random_ball(rng, M_PI - 0.01);
    EXPECT_LT((log_so3(exp_so3(t)) - t).norm(), 1e-9);
  }
}

TEST(StateBoxplus, IdentityAndBlockIndependence) {
  std::mt19937_64 rng(4);
  const FilterState s = random_state(rng);
  const FilterState same = state_boxplus(s, TangentVector13::Zero());
  EXPECT_EQ(same.p, s.p);
  EXPECT_TRUE(same.R == s.R);
  EXPECT_EQ(same.theta, s.theta);

  TangentVector13 e = TangentVector13::Zero();
  e(idx::kTheta) = 0.1;
  const FilterState t = state_boxplus(s, e);
  EXPECT_EQ(t.p, s.p);
  EXPECT_TRUE(t.R == s.R);
  EXPECT_EQ(t.v, s.v);
  EXPECT_EQ(t.w, s.w);
  EXPECT_EQ(t.theta, s.theta + 0.1);
  EXPECT_TRUE(state_boxminus(s, s).isZero(0.0));
}

TEST(StateBoxplus, RoundTrip) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const FilterState s = random_state(rng);
    TangentVector13 e;
    for (int k = 0; k < 13; ++k) e(k) = n(rng);
    e.segment<3>(idx::kR) = random_ball(rng, M_PI - 0.01);
    EXPECT_LT((state_boxminus(state_boxplus(s, e), s) - e).norm(), 1e-9);
  }
}

TEST(PoseOplus, Basics) {
  std::mt19937_64 rng(6);
  const Pose z{Vec3(1, 2, 3), Rotation(random_rotation_matrix(rng))};
  EXPECT_TRUE(pose_ominus(z, z).isZero(0.0));
  Vec6 d;
  d << 0.1, 0, 0, 0, 0, 0;
  const Pose moved{z.p + Vec3(0.1, 0, 0), z.R};
  EXPECT_LT((pose_ominus(moved, z) - d).norm(), 1e-15);
  for (int i = 0; i < 100; ++i) {
    Vec6 delta;
    delta.head<3>() = random_ball(rng, 2.0);
    delta.tail<3>() = random_ball(rng, M_PI - 0.01);
    EXPECT_LT((pose_ominus(pose_oplus(z, delta), z) - delta).norm(), 1e-9);
  }
}
