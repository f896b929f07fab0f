#pragma once

// Error-state EKF over FilterState with the contact dynamics as motion model.
//
// Belief<13> estimates the combined friction theta alongside the pose and
// twist; Belief<12> pins theta to a known value and drops it from the
// covariance.

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "physekf/dynamics/world.hpp"
#include "physekf/errors.hpp"
#include "physekf/liegroup.hpp"

namespace physekf {

enum class FilterMode { kEstimateFriction, kKnownFriction };

struct NoiseConfig {
  double s_state = 0.0;  // process noise on each of p, R, v, w (per predict)
  double s_theta = 0.0;
  double q_p = 0.0;
  double q_R = 0.0;
  double sigma0_p = 0.0;
  double sigma0_R = 0.0;
  double sigma0_v = 0.0;
  double sigma0_w = 0.0;
  double sigma0_theta = 0.0;
  double zeta = 1.0;  // gating threshold on the squared Mahalanobis distance
};

enum class Dataset { kSynthetic, kReal };

/// Tuned defaults per dataset and filter mode.
inline NoiseConfig preset_noise(Dataset data, FilterMode mode) {
  NoiseConfig c;
  const bool synthetic = data == Dataset::kSynthetic;
  if (mode == FilterMode::kEstimateFriction) {
    if (synthetic) {
      c = {0.00011, 3.49e-6, 0.00025, 0.00092, 88.253, 0.00469, 549.57, 0.260, 0.07372, 340.0};
    } else {
      c = {3.549e-5, 2.47e-5, 6.91e-5, 0.2, 0.0138, 1.0902, 546.27, 246.794, 0.21, 460.0};
    }
  } else {
    if (synthetic) {
      c = {0.0078, 0.0, 0.00018, 0.00021, 3.68122, 0.26089, 0.00011, 209.502, 0.0, 160.0};
    } else {
      c = {0.0012, 0.0, 1.12e-5, 0.0005, 5.13, 47.6, 12.93, 141.8, 0.0, 120.0};
    }
  }
  return c;
}

struct ObservationFrame {
  double t = 0.0;
  Pose pose;
  bool valid = true;
};

/// World the tracked body moves in. Planes should carry friction 1 so that the
/// body's own coefficient (theta^2) is the combined one.
struct MotionContext {
  World world;
  int body = 0;
};

template <int N>
struct Belief {
  static_assert(N == 12 || N == 13);
  using Cov = Eigen::Matrix<double, N, N>;
  FilterState mean;
  Cov cov = Cov::Zero();
};

struct JacobianOptions {
  double step = 1e-6;
  /// The theta column is evaluated at no less than this magnitude. At theta = 0
  /// the map is flat in theta (mu = theta^2) and the filter could never leave it.
  double theta_floor = 0.05;
};

/// Loads `s` into the tracked body of a copy of the context world.
inline World world_with_state(const MotionContext& ctx, const FilterState& s) {
  World w = ctx.world;
  RigidBody& b = w.bodies.at(ctx.body);
  b.pose = s.pose();
  b.twist = {s.w, s.v};
  b.friction = s.mu();
  return w;
}

inline FilterState state_of(const World& w, int body, double theta) {
  const RigidBody& b = w.bodies[body];
  FilterState s;
  s.p = b.pose.p;
  s.R = b.pose.R;
  s.v = b.twist.v;
  s.w = b.twist.w;
  s.theta = theta;
  return s;
}

/// One step of the physics motion model; theta is carried through unchanged.
inline FilterState motion_model(const FilterState& s, double dt, const MotionContext& ctx,
                                StepRecord* record = nullptr) {
  World w = world_with_state(ctx, s);
  StepRecord rec = step(w, dt);
  if (record) *record = std::move(rec);
  return state_of(w, ctx.body, s.theta);
}

/// Same map with the contact features and LCP active set of `rec` held fixed.
inline FilterState motion_model_frozen(const FilterState& s, double dt, const MotionContext& ctx,
                                       const StepRecord& rec) {
  World w = world_with_state(ctx, s);
  step_frozen(w, dt, rec, true);
  return state_of(w, ctx.body, s.theta);
}

/// Central-difference Jacobian of g(s [+] tau) [-] g(s) in the 13-dim tangent.
/// Only the first `dims` columns are computed; the rest stay zero.
inline Eigen::Matrix<double, 13, 13> jacobian_motion(const FilterState& s, double dt, const MotionContext& ctx,
                                                     const StepRecord& rec, const JacobianOptions& opt = {},
                                                     int dims = 13) {
  Eigen::Matrix<double, 13, 13> G = Eigen::Matrix<double, 13, 13>::Zero();
  FilterState base = s;
  for (int j = 0; j < dims; ++j) {
    if (j == idx::kTheta && std::abs(s.theta) < opt.theta_floor) {
      base.theta = std::copysign(opt.theta_floor, s.theta);
    }
    double h = opt.step;
    for (int attempt = 0;; ++attempt) {
      try {
        TangentVector13 e = TangentVector13::Zero();
        e(j) = h;
        const FilterState plus = motion_model_frozen(state_boxplus(base, e), dt, ctx, rec);
        const FilterState minus = motion_model_frozen(state_boxplus(base, -e), dt, ctx, rec);
        G.col(j) = state_boxminus(plus, minus) / (2.0 * h);
        break;
      } catch (const NumericalFailure&) {
        if (attempt == 1) throw;
        h /= 10.0;
      }
    }
    base.theta = s.theta;
  }
  return G;
}

template <int N>
Eigen::Matrix<double, N, N> process_noise(const NoiseConfig& cfg) {
  Eigen::Matrix<double, N, 1> d;
  d.template head<12>().setConstant(cfg.s_state);
  if constexpr (N == 13) d(12) = cfg.s_theta;
  return d.asDiagonal();
}

inline Eigen::Matrix<double, 6, 6> observation_noise(const NoiseConfig& cfg) {
  Vec6 d;
  d << Vec3::Constant(cfg.q_p), Vec3::Constant(cfg.q_R);
  return d.asDiagonal();
}

template <int N>
Eigen::Matrix<double, N, N> initial_covariance(const NoiseConfig& cfg) {
  Eigen::Matrix<double, N, 1> d;
  d.template segment<3>(idx::kP).setConstant(cfg.sigma0_p);
  d.template segment<3>(idx::kR).setConstant(cfg.sigma0_R);
  d.template segment<3>(idx::kV).setConstant(cfg.sigma0_v);
  d.template segment<3>(idx::kW).setConstant(cfg.sigma0_w);
  if constexpr (N == 13) d(idx::kTheta) = cfg.sigma0_theta;
  return d.asDiagonal();
}

/// Belief from two consecutive frames: pose of the second, twist by finite differences.
template <int N>
Belief<N> init_belief(const ObservationFrame& obs0, const ObservationFrame& obs1, double rate,
                      const NoiseConfig& cfg, double theta = 0.0) {
  if (!obs0.valid || !obs1.valid) throw InitializationFailure("initialization needs two valid frames");
  if (!(obs1.t > obs0.t)) throw InitializationFailure("initialization frames must be increasing in time");
  Belief<N> b;
  b.mean.p = obs1.pose.p;
  b.mean.R = obs1.pose.R;
  b.mean.v = (obs1.pose.p - obs0.pose.p) * rate;
  b.mean.w = log_so3(obs1.pose.R * obs0.pose.R.inverse()) * rate;
  b.mean.theta = theta;
  b.cov = initial_covariance<N>(cfg);
  return b;
}

template <int N>
void symmetrize(Eigen::Matrix<double, N, N>& P) {
  P = 0.5 * (P + P.transpose()).eval();
}

template <int N>
Belief<N> predict(const Belief<N>& b, double dt, const MotionContext& ctx, const NoiseConfig& cfg,
                  const JacobianOptions& opt = {}) {
  StepRecord rec;
  Belief<N> out;
  out.mean = motion_model(b.mean, dt, ctx, &rec);
  const Eigen::Matrix<double, N, N> G = jacobian_motion(b.mean, dt, ctx, rec, opt, N).template topLeftCorner<N, N>();
  out.cov = G * b.cov * G.transpose() + process_noise<N>(cfg);
  symmetrize<N>(out.cov);
  return out;
}

inline Pose observation_model(const FilterState& s) { return s.pose(); }

template <int N>
Eigen::Matrix<double, 6, N> observation_jacobian() {
  Eigen::Matrix<double, 6, N> H = Eigen::Matrix<double, 6, N>::Zero();
  H.template leftCols<6>().setIdentity();
  return H;
}

struct Innovation {
  Vec6 residual;
  Eigen::Matrix<double, 6, 6> cov;
  Eigen::LLT<Eigen::Matrix<double, 6, 6>> llt;
  double distance = 0.0;
};

template <int N>
Innovation innovation(const Pose& z, const Belief<N>& b, const NoiseConfig& cfg) {
  Innovation in;
  in.residual = pose_ominus(z, observation_model(b.mean));
  in.cov = b.cov.template topLeftCorner<6, 6>() + observation_noise(cfg);
  in.llt.compute(in.cov);
  if (in.llt.info() != Eigen::Success) throw NumericalFailure("innovation covariance is not positive definite");
  in.distance = in.residual.dot(in.llt.solve(in.residual));
  return in;
}

template <int N>
double gating_distance(const Pose& z, const Belief<N>& b, const NoiseConfig& cfg) {
  return innovation(z, b, cfg).distance;
}

template <int N>
struct Correction {
  Belief<N> belief;
  bool accepted = false;
  double distance = 0.0;
};

template <int N>
Correction<N> correct(const Belief<N>& b, const ObservationFrame& z, const NoiseConfig& cfg) {
  Correction<N> out{b, false, 0.0};
  if (!z.valid) return out;
  const Innovation in = innovation(z.pose, b, cfg);
  out.distance = in.distance;
  if (in.distance > cfg.zeta) return out;

  const Eigen::Matrix<double, N, 6> PHt = b.cov.template leftCols<6>();
  const Eigen::Matrix<double, N, 6> K = in.llt.solve(PHt.transpose()).transpose();
  TangentVector13 dx = TangentVector13::Zero();
  dx.head<N>() = K * in.residual;
  out.belief.mean = state_boxplus(b.mean, dx);
  Eigen::Matrix<double, N, N> IKH = Eigen::Matrix<double, N, N>::Identity();
  IKH.template leftCols<6>() -= K;
  out.belief.cov = IKH * b.cov * IKH.transpose() + K * observation_noise(cfg) * K.transpose();
  symmetrize<N>(out.belief.cov);
  out.accepted = true;
  return out;
}

struct FilterOptions {
  FilterMode mode = FilterMode::kEstimateFriction;
  double frame_rate = 30.0;
  int predicts_per_frame = 2;
  double theta0 = 0.0;
  /// Observations after this frame are ignored (pure prediction).
  std::optional<int> predict_from;
  JacobianOptions jacobian;
};

struct BeliefRecord {
  double t = 0.0;
  FilterState mean;
  Eigen::MatrixXd cov;
  bool corrected = false;
  bool accepted = false;
  double gating_distance = 0.0;
  bool failed = false;  // motion model failed; the frame was propagated kinematically
};

namespace detail {

template <int N>
BeliefRecord make_record(double t, const Belief<N>& b) {
  BeliefRecord r;
  r.t = t;
  r.mean = b.mean;
  r.cov = b.cov;
  return r;
}

/// Constant-twist fallback when the contact solve fails.
template <int N>
Belief<N> predict_kinematic(const Belief<N>& b, double dt, const NoiseConfig& cfg) {
  Belief<N> out = b;
  out.mean.p = b.mean.p + dt * b.mean.v;
  out.mean.R = perturb_left(b.mean.R, dt * b.mean.w);
  Eigen::Matrix<double, N, N> G = Eigen::Matrix<double, N, N>::Identity();
  G.template block<3, 3>(idx::kP, idx::kV) = dt * Mat3::Identity();
  G.template block<3, 3>(idx::kR, idx::kW) = dt * Mat3::Identity();
  out.cov = G * b.cov * G.transpose() + process_noise<N>(cfg);
  symmetrize<N>(out.cov);
  return out;
}

/// One predict substep; after a motion-model failure the rest of the frame
/// is propagated kinematically.
template <int N>
void predict_substep(Belief<N>& b, bool& failed, double dt, const MotionContext& ctx, const NoiseConfig& cfg,
                     const JacobianOptions& jopt) {
  if (!failed) {
    try {
      b = predict<N>(b, dt, ctx, cfg, jopt);
      return;
    } catch (const NumericalFailure&) {
      failed = true;
    }
  }
  b = predict_kinematic<N>(b, dt, cfg);
}

/// Correction at a frame (if observed and the prediction held) and its record.
template <int N>
BeliefRecord correct_frame(Belief<N>& b, const ObservationFrame& z, int k, bool failed, const NoiseConfig& cfg,
                           const FilterOptions& opt) {
  const bool observe = !opt.predict_from || k <= *opt.predict_from;
  const bool corrected = !failed && observe && z.valid;
  bool accepted = false;
  double distance = 0.0;
  if (corrected) {
    const Correction<N> c = correct<N>(b, z, cfg);
    b = c.belief;
    accepted = c.accepted;
    distance = c.distance;
  }
  BeliefRecord rec = make_record(z.t, b);
  rec.corrected = corrected;
  rec.accepted = accepted;
  rec.gating_distance = distance;
  rec.failed = failed;
  return rec;
}

template <int N>
std::vector<BeliefRecord> run(const std::vector<ObservationFrame>& obs, Belief<N> b, int first, const NoiseConfig& cfg,
                              const MotionContext& ctx, const FilterOptions& opt) {
  std::vector<BeliefRecord> out;
  const double dt = 1.0 / (opt.frame_rate * opt.predicts_per_frame);
  for (int k = first + 1; k < static_cast<int>(obs.size()); ++k) {
    bool failed = false;
    for (int i = 0; i < opt.predicts_per_frame; ++i) predict_substep<N>(b, failed, dt, ctx, cfg, opt.jacobian);
    out.push_back(correct_frame<N>(b, obs[k], k, failed, cfg, opt));
  }
  return out;
}

}  // namespace detail

/// Filters a 30 Hz observation log. The first two frames initialize the
/// belief; record k corresponds to obs[k]. In kKnownFriction mode theta is
/// fixed at opt.theta0.
inline std::vector<BeliefRecord> run_filter(const std::vector<ObservationFrame>& obs, const NoiseConfig& cfg,
                                            const MotionContext& ctx, const FilterOptions& opt = {}) {
  if (obs.size() < 2) throw InitializationFailure("need at least two frames");
  std::vector<BeliefRecord> out;
  auto go = [&](auto b) {
    BeliefRecord r0 = detail::make_record(obs[0].t, b);
    r0.mean.p = obs[0].pose.p;
    r0.mean.R = obs[0].pose.R;
    out.push_back(r0);
    out.push_back(detail::make_record(obs[1].t, b));
    auto rest = detail::run(obs, b, 1, cfg, ctx, opt);
    out.insert(out.end(), rest.begin(), rest.end());
  };
  if (opt.mode == FilterMode::kEstimateFriction) {
    go(init_belief<13>(obs[0], obs[1], opt.frame_rate, cfg, opt.theta0));
  } else {
    go(init_belief<12>(obs[0], obs[1], opt.frame_rate, cfg, opt.theta0));
  }
  return out;
}

/// Filters from a given belief at obs[first]; records start at obs[first + 1].
template <int N>
std::vector<BeliefRecord> run_filter_from(const std::vector<ObservationFrame>& obs, const Belief<N>& start, int first,
                                          const NoiseConfig& cfg, const MotionContext& ctx,
                                          const FilterOptions& opt = {}) {
  return detail::run(obs, start, first, cfg, ctx, opt);
}

}  // namespace physekf
