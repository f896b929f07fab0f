#pragma once

// Error measures, recall curves and order statistics for trajectory evaluation.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "physekf/ekf.hpp"
#include "physekf/liegroup.hpp"
#include "physekf/synth.hpp"

namespace physekf::harness {

inline double rotation_error(const Rotation& est, const Rotation& gt) { return log_so3(est * gt.inverse()).norm(); }

/// Per-frame estimate in a common form for the filter and the baselines.
/// Absent fields count as unavailable.
struct FrameEstimate {
  bool valid = true;
  Pose pose;
  std::optional<Twist> twist;
  std::optional<double> mu;
};

struct FrameErrors {
  double position = 0.0;
  double rotation = 0.0;
  double linear_velocity = 0.0;
  double angular_velocity = 0.0;
  double friction = 0.0;
};

struct ErrorSummary {
  double position = 0.0;
  double rotation = 0.0;
  double linear_velocity = 0.0;
  double angular_velocity = 0.0;
  double friction = 0.0;
  int frames = 0;
};

inline FrameErrors frame_errors(const FrameEstimate& e, const TrajectorySample& gt, double mu_gt) {
  FrameErrors out;
  out.position = (e.pose.p - gt.pose.p).norm();
  out.rotation = rotation_error(e.pose.R, gt.pose.R);
  if (e.twist) {
    out.linear_velocity = (e.twist->v - gt.twist.v).norm();
    out.angular_velocity = (e.twist->w - gt.twist.w).norm();
  }
  if (e.mu) out.friction = std::abs(*e.mu - mu_gt);
  return out;
}

/// Mean of each error over frames k >= from_step that carry an estimate.
inline ErrorSummary trajectory_errors(const std::vector<FrameEstimate>& est, const std::vector<TrajectorySample>& gt,
                                      double mu_gt, int from_step) {
  if (est.size() != gt.size()) throw InvalidInput("estimate and ground truth lengths differ");
  if (from_step < 0 || from_step >= static_cast<int>(gt.size())) throw InvalidInput("from_step out of range");
  ErrorSummary s;
  for (std::size_t k = from_step; k < gt.size(); ++k) {
    if (!est[k].valid) continue;
    const FrameErrors e = frame_errors(est[k], gt[k], mu_gt);
    s.position += e.position;
    s.rotation += e.rotation;
    s.linear_velocity += e.linear_velocity;
    s.angular_velocity += e.angular_velocity;
    s.friction += e.friction;
    ++s.frames;
  }
  if (s.frames > 0) {
    const double n = s.frames;
    s.position /= n;
    s.rotation /= n;
    s.linear_velocity /= n;
    s.angular_velocity /= n;
    s.friction /= n;
  }
  return s;
}

inline std::vector<FrameEstimate> estimates_from_beliefs(const std::vector<BeliefRecord>& beliefs) {
  std::vector<FrameEstimate> out;
  for (const auto& b : beliefs) {
    FrameEstimate e;
    e.pose = b.mean.pose();
    e.twist = Twist{b.mean.w, b.mean.v};
    e.mu = b.mean.mu();
    out.push_back(e);
  }
  return out;
}

inline std::vector<FrameEstimate> estimates_from_truth(const std::vector<TrajectorySample>& gt, double mu) {
  std::vector<FrameEstimate> out;
  for (const auto& s : gt) out.push_back({true, s.pose, s.twist, mu});
  return out;
}

/// Observation baseline: detected poses with velocities from finite
/// differences against the previous valid detection. Missing frames stay
/// missing; the first detection has no velocity and reports zero. Friction is
/// scored as the constant-zero guess.
inline std::vector<FrameEstimate> finite_difference_estimates(const std::vector<ObservationFrame>& obs) {
  std::vector<FrameEstimate> out;
  const ObservationFrame* prev = nullptr;
  for (const auto& f : obs) {
    FrameEstimate e;
    e.valid = f.valid;
    e.pose = f.pose;
    e.mu = 0.0;
    if (f.valid) {
      Twist tw;
      if (prev) {
        const double dt = f.t - prev->t;
        tw.v = (f.pose.p - prev->pose.p) / dt;
        tw.w = log_so3(f.pose.R * prev->pose.R.inverse()) / dt;
      }
      e.twist = tw;
      prev = &f;
    }
    out.push_back(e);
  }
  return out;
}

/// Constant-zero friction baseline, for comparison against estimated friction.
inline double zero_friction_error(double mu_gt) { return std::abs(mu_gt); }

enum class RecallMetric { kPosition, kRotation };

/// Fraction of frames whose error is below each threshold; frames without an
/// estimate count as failures.
inline std::vector<double> recall_curve(const std::vector<FrameEstimate>& est, const std::vector<TrajectorySample>& gt,
                                        const std::vector<double>& thresholds,
                                        RecallMetric metric = RecallMetric::kPosition) {
  if (est.size() != gt.size()) throw InvalidInput("estimate and ground truth lengths differ");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw InvalidInput("thresholds must be ascending");
  std::vector<double> recall(thresholds.size(), 0.0);
  if (gt.empty()) return recall;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!est[k].valid) continue;
    const double err = metric == RecallMetric::kPosition ? (est[k].pose.p - gt[k].pose.p).norm()
                                                         : rotation_error(est[k].pose.R, gt[k].pose.R);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (err < thresholds[i]) recall[i] += 1.0;
    }
  }
  for (double& r : recall) r /= static_cast<double>(gt.size());
  return recall;
}

struct Aggregate {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  int count = 0;
};

/// Quantile by linear interpolation between order statistics (h = (n - 1) p).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InvalidInput("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  a.count = static_cast<int>(v.size());
  if (v.empty()) return a;
  a.median = quantile(v, 0.5);
  a.q1 = quantile(v, 0.25);
  a.q3 = quantile(v, 0.75);
  double sum = 0.0;
  for (double x : v) sum += x;
  a.mean = sum / static_cast<double>(v.size());
  a.min = *std::min_element(v.begin(), v.end());
  a.max = *std::max_element(v.begin(), v.end());
  return a;
}

}  // namespace physekf::harness
