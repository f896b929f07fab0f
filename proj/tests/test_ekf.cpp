#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "physekf/ekf.hpp"

using namespace physekf;

namespace {

constexpr double kDt = 1.0 / 60.0;

MotionContext box_context(bool with_ground, const Vec3& gravity = Vec3(0, 0, -9.81)) {
  MotionContext ctx;
  ctx.world.bodies.push_back(make_body(make_box(Vec3(0.05, 0.04, 0.03)), 0.5));
  if (with_ground) ctx.world.planes.push_back(Plane{});
  ctx.world.params.contact.gravity = gravity;
  return ctx;
}

FilterState resting_state(double theta) {
  FilterState s;
  s.p = Vec3(0.1, -0.2, 0.03);
  s.R = exp_so3(Vec3(0, 0, 0.4));
  s.theta = theta;
  return s;
}

FilterState sliding_state(double theta) {
  FilterState s = resting_state(theta);
  s.v = Vec3(0.6, 0.3, 0);
  s.w = Vec3(0, 0, 2.0);
  return s;
}

FilterState flying_state() {
  FilterState s;
  s.p = Vec3(0, 0, 1.0);
  s.R = exp_so3(Vec3(0.3, -0.2, 0.5));
  s.v = Vec3(0.5, -0.2, 1.0);
  s.w = Vec3(1.0, 2.0, -0.5);
  s.theta = 0.3;
  return s;
}

Eigen::Matrix<double, 13, 13> unfrozen_jacobian(const FilterState& s, const MotionContext& ctx, double h) {
  Eigen::Matrix<double, 13, 13> G;
  for (int j = 0; j < 13; ++j) {
    TangentVector13 e = TangentVector13::Zero();
    e(j) = h;
    G.col(j) = state_boxminus(motion_model(state_boxplus(s, e), kDt, ctx),
                              motion_model(state_boxplus(s, -e), kDt, ctx)) /
               (2 * h);
  }
  return G;
}

double relative_deviation(const Eigen::Matrix<double, 13, 13>& a, const Eigen::Matrix<double, 13, 13>& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

ObservationFrame frame(double t, const Vec3& p, const Rotation& R = Rotation()) {
  ObservationFrame f;
  f.t = t;
  f.pose = {p, R};
  return f;
}

}  // namespace

TEST(InitBelief, FiniteDifferences) {
  const NoiseConfig cfg = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  const auto same = init_belief<13>(frame(0, Vec3(1, 2, 3)), frame(1.0 / 30, Vec3(1, 2, 3)), 30.0, cfg);
  EXPECT_TRUE(same.mean.v.isZero(0.0));
  EXPECT_TRUE(same.mean.w.isZero(0.0));

  const auto b = init_belief<13>(frame(0, Vec3::Zero()), frame(1.0 / 30, Vec3(0.02, 0, 0)), 30.0, cfg);
  EXPECT_LT((b.mean.v - Vec3(0.6, 0, 0)).norm(), 1e-12);
  EXPECT_EQ(b.mean.theta, 0.0);
  EXPECT_EQ(b.cov(0, 0), 88.253);
  EXPECT_EQ(b.cov(12, 12), 0.07372);

  const auto r = init_belief<13>(frame(0, Vec3::Zero()), frame(1.0 / 30, Vec3::Zero(), exp_so3(Vec3(0, 0, 0.1))),
                                 30.0, cfg);
  EXPECT_LT((r.mean.w - Vec3(0, 0, 3.0)).norm(), 1e-12);
}

TEST(InitBelief, RejectsInvalidFrames) {
  const NoiseConfig cfg = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  ObservationFrame missing = frame(1.0 / 30, Vec3::Zero());
  missing.valid = false;
  EXPECT_THROW(init_belief<13>(frame(0, Vec3::Zero()), missing, 30.0, cfg), InitializationFailure);
  EXPECT_THROW(init_belief<13>(frame(0, Vec3::Zero()), frame(0, Vec3::Zero()), 30.0, cfg), InitializationFailure);
}

TEST(Presets, TableValues) {
  const NoiseConfig f = preset_noise(Dataset::kSynthetic, FilterMode::kKnownFriction);
  EXPECT_EQ(f.zeta, 160.0);
  EXPECT_EQ(f.sigma0_w, 209.502);
  const NoiseConfig r = preset_noise(Dataset::kReal, FilterMode::kEstimateFriction);
  EXPECT_EQ(r.q_R, 0.2);
  EXPECT_EQ(r.zeta, 460.0);
  EXPECT_EQ(preset_noise(Dataset::kReal, FilterMode::kKnownFriction).zeta, 120.0);
}

TEST(MotionModel, ContactFreeWithoutForces) {
  const MotionContext ctx = box_context(false, Vec3::Zero());
  const FilterState s = flying_state();
  const FilterState n = motion_model(s, kDt, ctx);
  EXPECT_EQ(n.v, s.v);
  EXPECT_EQ(n.w, s.w);
  EXPECT_EQ(n.theta, s.theta);
  EXPECT_LT((n.p - (s.p + kDt * s.v)).norm(), 1e-15);
  EXPECT_LT((n.R.matrix() - exp_so3(kDt * s.w).matrix() * s.R.matrix()).norm(), 1e-12);
}

TEST(MotionModel, RestingBoxIsFixedPoint) {
  const MotionContext ctx = box_context(true);
  const FilterState s = resting_state(0.3);
  const FilterState n = motion_model(s, kDt, ctx);
  EXPECT_LT(state_boxminus(n, s).norm(), 1e-8);
  EXPECT_EQ(n.theta, s.theta);
}

TEST(JacobianMotion, ContactFreeClosedForm) {
  const MotionContext ctx = box_context(false);
  const FilterState s = flying_state();
  StepRecord rec;
  motion_model(s, kDt, ctx, &rec);
  const auto G = jacobian_motion(s, kDt, ctx, rec);
  EXPECT_LT((G.block<3, 3>(idx::kP, idx::kV) - kDt * Mat3::Identity()).norm(), 1e-8);
  EXPECT_LT((G.block<3, 3>(idx::kV, idx::kV) - Mat3::Identity()).norm(), 1e-8);
  EXPECT_LT((G.block<3, 3>(idx::kP, idx::kP) - Mat3::Identity()).norm(), 1e-8);
  EXPECT_NEAR(G(idx::kTheta, idx::kTheta), 1.0, 1e-9);
  EXPECT_LT(G.col(idx::kTheta).head<12>().norm(), 1e-12);
}

TEST(JacobianMotion, RestingThetaColumnVanishes) {
  const MotionContext ctx = box_context(true);
  for (double theta : {0.0, 0.3}) {
    const FilterState s = resting_state(theta);
    StepRecord rec;
    motion_model(s, kDt, ctx, &rec);
    const auto G = jacobian_motion(s, kDt, ctx, rec);
    EXPECT_LT(G.col(idx::kTheta).head<12>().norm(), 1e-6) << theta;
  }
}

TEST(JacobianMotion, SlidingFrictionDecelerates) {
  const MotionContext ctx = box_context(true);
  const FilterState s = sliding_state(0.3);
  StepRecord rec;
  motion_model(s, kDt, ctx, &rec);
  ASSERT_EQ(rec.contacts.size(), 4u);
  const auto G = jacobian_motion(s, kDt, ctx, rec);
  EXPECT_LT(s.v.normalized().dot(G.block<3, 1>(idx::kV, idx::kTheta)), 0.0);
  EXPECT_LT(relative_deviation(G, unfrozen_jacobian(s, ctx, 1e-5)), 1e-3);
}

TEST(JacobianMotion, ThetaFloorAtZeroFriction) {
  const MotionContext ctx = box_context(true);
  const FilterState s = sliding_state(0.0);
  StepRecord rec;
  motion_model(s, kDt, ctx, &rec);
  const auto floored = jacobian_motion(s, kDt, ctx, rec);
  EXPECT_LT(s.v.normalized().dot(floored.block<3, 1>(idx::kV, idx::kTheta)), 0.0);
  JacobianOptions none;
  none.theta_floor = 0.0;
  const auto flat = jacobian_motion(s, kDt, ctx, rec, none);
  EXPECT_LT(flat.col(idx::kTheta).head<12>().norm(), 1e-9);
}

TEST(JacobianMotion, MatchesOracleOnRandomStates) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    const bool flying = i % 2 == 0;
    const MotionContext ctx = box_context(!flying);
    FilterState s = flying ? flying_state() : sliding_state(0.2 + 0.15 * std::abs(u(rng)));
    s.v += 0.3 * Vec3(u(rng), u(rng), 0);
    s.w.z() += u(rng);
    if (flying) s.R = exp_so3(Vec3(u(rng), u(rng), u(rng))) * s.R;
    StepRecord rec;
    motion_model(s, kDt, ctx, &rec);
    EXPECT_LT(relative_deviation(jacobian_motion(s, kDt, ctx, rec), unfrozen_jacobian(s, ctx, 1e-5)), 1e-3) << i;
  }
}

TEST(Predict, NoiselessTracksRollout) {
  const MotionContext ctx = box_context(false);
  NoiseConfig cfg;
  Belief<13> b;
  b.mean = flying_state();
  FilterState truth = b.mean;
  for (int k = 0; k < 30; ++k) {
    b = predict<13>(b, kDt, ctx, cfg);
    truth = motion_model(truth, kDt, ctx);
  }
  EXPECT_EQ(b.mean.p, truth.p);
  EXPECT_TRUE(b.mean.R == truth.R);
  EXPECT_EQ(b.mean.v, truth.v);
}

TEST(Predict, ProcessNoiseInflatesCovariance) {
  const MotionContext ctx = box_context(true);
  const NoiseConfig cfg = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  Belief<13> b;
  b.mean = resting_state(0.3);
  const Belief<13> n = predict<13>(b, kDt, ctx, cfg);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(n.cov(i, i), 0.00011, 1e-12);
  EXPECT_NEAR(n.cov(12, 12), 3.49e-6, 1e-15);
  EXPECT_GT(predict<13>(n, kDt, ctx, cfg).cov.trace(), n.cov.trace());
}

TEST(ObservationModel, PoseOnly) {
  const FilterState s = flying_state();
  EXPECT_EQ(observation_model(s).p, s.p);
  const auto H = observation_jacobian<13>();
  TangentVector13 d = TangentVector13::Zero();
  d.segment<3>(idx::kV) = Vec3(1, 2, 3);
  EXPECT_TRUE((H * d).isZero(0.0));
  EXPECT_EQ(observation_jacobian<12>().cols(), 12);
  EXPECT_EQ(H.rows(), 6);
}

TEST(Gating, ClosedForms) {
  NoiseConfig cfg;
  cfg.q_p = cfg.q_R = 0.01;
  Belief<13> b;
  b.mean = flying_state();
  EXPECT_EQ(gating_distance(observation_model(b.mean), b, cfg), 0.0);
  const Pose z = pose_oplus(b.mean.pose(), (Vec6() << 0.1, 0.2, 0, 0, 0.1, 0).finished());
  EXPECT_NEAR(gating_distance(z, b, cfg), 0.06 / 0.01, 1e-9);
}

TEST(Gating, MatchesExplicitInverse) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  NoiseConfig cfg;
  cfg.q_p = 0.01;
  cfg.q_R = 0.02;
  for (int i = 0; i < 20; ++i) {
    Belief<13> b;
    b.mean = flying_state();
    Eigen::Matrix<double, 13, 13> A;
    for (int r = 0; r < 13; ++r)
      for (int c = 0; c < 13; ++c) A(r, c) = n(rng);
    b.cov = A * A.transpose() * 0.01;
    Vec6 d;
    for (int k = 0; k < 6; ++k) d(k) = 0.3 * n(rng);
    const Pose z = pose_oplus(b.mean.pose(), d);
    const Vec6 r = pose_ominus(z, b.mean.pose());
    const Eigen::Matrix<double, 6, 6> S = b.cov.topLeftCorner<6, 6>() + observation_noise(cfg);
    const double oracle = r.dot(S.inverse() * r);
    EXPECT_NEAR(gating_distance(z, b, cfg), oracle, 1e-9 * std::max(1.0, oracle));
  }
}

TEST(Gating, SingularInnovationThrows) {
  NoiseConfig cfg;
  Belief<13> b;
  EXPECT_THROW(gating_distance(b.mean.pose(), b, cfg), NumericalFailure);
}

TEST(Correct, UninformativeMeasurement) {
  NoiseConfig cfg;
  cfg.q_p = cfg.q_R = 1e12;
  cfg.zeta = 1e9;
  Belief<13> b;
  b.mean = flying_state();
  b.cov = Eigen::Matrix<double, 13, 13>::Identity();
  ObservationFrame z;
  z.pose = {b.mean.p + Vec3(0.5, 0, 0), b.mean.R};
  const auto c = correct<13>(b, z, cfg);
  EXPECT_TRUE(c.accepted);
  EXPECT_LT(state_boxminus(c.belief.mean, b.mean).norm(), 1e-6);
}

TEST(Correct, UninformativePrior) {
  NoiseConfig cfg;
  cfg.q_p = cfg.q_R = 1e-4;
  cfg.zeta = 1e9;
  Belief<13> b;
  b.mean = flying_state();
  b.cov = Eigen::Matrix<double, 13, 13>::Identity();
  b.cov.topLeftCorner<6, 6>() *= 1e12;
  ObservationFrame z;
  z.pose = {b.mean.p + Vec3(0.5, -0.1, 0.2), exp_so3(Vec3(0.2, 0, 0.1)) * b.mean.R};
  const auto c = correct<13>(b, z, cfg);
  EXPECT_LT((c.belief.mean.p - z.pose.p).norm(), 1e-6);
  EXPECT_LT(rotation_angle_between(c.belief.mean.R, z.pose.R), 1e-6);
  EXPECT_LT((c.belief.cov - c.belief.cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Correct, OutlierRejectedBitwise) {
  const NoiseConfig cfg = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  Belief<13> b;
  b.mean = flying_state();
  b.cov = Eigen::Matrix<double, 13, 13>::Identity() * 1e-3;
  ObservationFrame z;
  z.pose = {b.mean.p + Vec3(10, 0, 0), b.mean.R};
  const auto c = correct<13>(b, z, cfg);
  EXPECT_FALSE(c.accepted);
  EXPECT_GT(c.distance, cfg.zeta);
  EXPECT_EQ(c.belief.mean.p, b.mean.p);
  EXPECT_TRUE(c.belief.mean.R == b.mean.R);
  EXPECT_EQ(c.belief.cov, b.cov);

  z.valid = false;
  EXPECT_FALSE(correct<13>(b, z, cfg).accepted);
}

namespace {

std::vector<ObservationFrame> constant_velocity_log(const Vec3& v, int frames) {
  std::vector<ObservationFrame> obs;
  for (int k = 0; k < frames; ++k) {
    const double t = k / 30.0;
    obs.push_back(frame(t, Vec3(0, 0, 1) + t * v, exp_so3(Vec3(0, 0, 1.5 * t))));
  }
  return obs;
}

}  // namespace

TEST(RunFilter, NoiselessConstantVelocity) {
  const MotionContext ctx = box_context(false, Vec3::Zero());
  const NoiseConfig cfg = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  const Vec3 v(0.4, -0.3, 0.1);
  const auto out = run_filter(constant_velocity_log(v, 30), cfg, ctx);
  ASSERT_EQ(out.size(), 30u);
  EXPECT_LT((out.back().mean.v - v).norm(), 1e-6);
  EXPECT_LT((out.back().mean.w - Vec3(0, 0, 1.5)).norm(), 1e-6);
  for (std::size_t k = 2; k < out.size(); ++k) EXPECT_TRUE(out[k].accepted);
}

TEST(RunFilter, PredictionModeMatchesPredictLoop) {
  const MotionContext ctx = box_context(true);
  const NoiseConfig cfg = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  std::vector<ObservationFrame> obs;
  for (int k = 0; k < 20; ++k) obs.push_back(frame(k / 30.0, Vec3(0.02 * k, 0, 0.03)));
  FilterOptions opt;
  opt.predict_from = 10;
  const auto out = run_filter(obs, cfg, ctx, opt);

  FilterOptions upto;
  const std::vector<ObservationFrame> head(obs.begin(), obs.begin() + 11);
  const auto ref = run_filter(head, cfg, ctx, upto);
  Belief<13> b;
  b.mean = ref.back().mean;
  b.cov = ref.back().cov;
  for (int k = 11; k < 20; ++k) {
    b = predict<13>(b, kDt, ctx, cfg);
    b = predict<13>(b, kDt, ctx, cfg);
    EXPECT_EQ(out[k].mean.p, b.mean.p);
    EXPECT_EQ(out[k].mean.v, b.mean.v);
    EXPECT_EQ(out[k].mean.theta, b.mean.theta);
    EXPECT_FALSE(out[k].corrected);
  }
}

TEST(RunFilter, KnownFrictionMatchesPinnedEstimate) {
  const MotionContext ctx = box_context(true);
  std::vector<ObservationFrame> obs;
  FilterState truth = sliding_state(std::sqrt(0.06));
  for (int k = 0; k < 40; ++k) {
    obs.push_back(frame(k / 30.0, truth.p, truth.R));
    truth = motion_model(motion_model(truth, kDt, ctx), kDt, ctx);
  }
  NoiseConfig full = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  full.sigma0_theta = 0.0;
  full.s_theta = 0.0;
  FilterOptions a;
  a.theta0 = std::sqrt(0.06);
  FilterOptions f = a;
  f.mode = FilterMode::kKnownFriction;
  const auto pinned = run_filter(obs, full, ctx, a);
  const auto known = run_filter(obs, full, ctx, f);
  ASSERT_EQ(pinned.size(), known.size());
  EXPECT_EQ(known.back().cov.rows(), 12);
  for (std::size_t k = 0; k < pinned.size(); ++k) {
    EXPECT_LT((pinned[k].mean.p - known[k].mean.p).norm(), 1e-9) << k;
    EXPECT_LT(rotation_angle_between(pinned[k].mean.R, known[k].mean.R), 1e-9) << k;
    EXPECT_EQ(pinned[k].mean.theta, a.theta0);
  }
}

TEST(RunFilter, CovarianceStaysPsd) {
  const MotionContext ctx = box_context(true);
  const NoiseConfig cfg = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  FilterState truth = sliding_state(std::sqrt(0.08));
  std::vector<ObservationFrame> obs;
  for (int k = 0; k < 60; ++k) {
    const Vec6 d = (Vec6() << 1e-3 * n(rng), 1e-3 * n(rng), 1e-3 * n(rng), 0.01 * n(rng), 0.01 * n(rng),
                    0.01 * n(rng))
                       .finished();
    ObservationFrame f;
    f.t = k / 30.0;
    f.pose = pose_oplus(truth.pose(), d);
    obs.push_back(f);
    truth = motion_model(motion_model(truth, kDt, ctx), kDt, ctx);
  }
  for (const auto& r : run_filter(obs, cfg, ctx)) {
    EXPECT_LT((r.cov - r.cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r.cov).eigenvalues().minCoeff(), -1e-9);
  }
}
