#pragma once

// Synthetic sliding scenes: scenario sampling, 240 Hz ground truth, and
// corrupted 30 Hz pose observations.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "physekf/dynamics/world.hpp"
#include "physekf/ekf.hpp"

namespace physekf {

enum class ShapeKind { kBox, kPrism };

struct CatalogEntry {
  int id;
  const char* name;
  double mass;      // kg
  double friction;  // reference coefficient of the object
  ShapeKind kind;
  Vec3 size;  // box: full extents; prism: (diameter, diameter, height)
};

/// Household objects with their masses and reference frictions. Shapes are
/// coarse boxes or octagonal prisms of roughly the real dimensions.
inline const std::array<CatalogEntry, 21>& object_catalog() {
  static const std::array<CatalogEntry, 21> kCatalog = {{
      {1, "master_chef_can", 0.414, 0.292, ShapeKind::kPrism, {0.102, 0.102, 0.140}},
      {2, "cracker_box", 0.411, 0.178, ShapeKind::kBox, {0.060, 0.158, 0.210}},
      {3, "sugar_box", 0.514, 0.335, ShapeKind::kBox, {0.038, 0.089, 0.175}},
      {4, "tomato_soup_can", 0.349, 0.246, ShapeKind::kPrism, {0.066, 0.066, 0.101}},
      {5, "mustard_bottle", 0.603, 0.273, ShapeKind::kBox, {0.058, 0.095, 0.190}},
      {6, "tuna_fish_can", 0.171, 0.205, ShapeKind::kPrism, {0.085, 0.085, 0.033}},
      {7, "pudding_box", 0.187, 0.214, ShapeKind::kBox, {0.035, 0.110, 0.089}},
      {8, "gelatin_box", 0.097, 0.377, ShapeKind::kBox, {0.028, 0.085, 0.073}},
      {9, "potted_meat_can", 0.370, 0.123, ShapeKind::kBox, {0.050, 0.097, 0.082}},
      {10, "banana", 0.066, 0.355, ShapeKind::kBox, {0.036, 0.190, 0.036}},
      {11, "pitcher_base", 0.244, 0.185, ShapeKind::kPrism, {0.140, 0.140, 0.240}},
      {12, "bleach_cleanser", 1.131, 0.394, ShapeKind::kBox, {0.065, 0.098, 0.250}},
      {13, "bowl", 0.147, 0.317, ShapeKind::kPrism, {0.160, 0.160, 0.055}},
      {14, "mug", 0.118, 0.327, ShapeKind::kPrism, {0.080, 0.080, 0.080}},
      {15, "power_drill", 0.895, 0.439, ShapeKind::kBox, {0.050, 0.180, 0.180}},
      {16, "wood_block", 0.729, 0.272, ShapeKind::kBox, {0.085, 0.085, 0.200}},
      {17, "scissors", 0.082, 0.433, ShapeKind::kBox, {0.200, 0.090, 0.015}},
      {18, "large_marker", 0.0158, 0.439, ShapeKind::kPrism, {0.018, 0.018, 0.120}},
      {19, "large_clamp", 0.125, 0.467, ShapeKind::kBox, {0.200, 0.090, 0.030}},
      {20, "extra_large_clamp", 0.202, 0.460, ShapeKind::kBox, {0.200, 0.160, 0.035}},
      {21, "foam_brick", 0.028, 0.182, ShapeKind::kBox, {0.050, 0.075, 0.050}},
  }};
  return kCatalog;
}

inline const CatalogEntry& catalog_entry(int id) {
  for (const auto& e : object_catalog()) {
    if (e.id == id) return e;
  }
  throw InvalidInput("unknown object id " + std::to_string(id));
}

inline Shape catalog_shape(const CatalogEntry& e) {
  if (e.kind == ShapeKind::kBox) return make_box(0.5 * e.size);
  return make_prism(0.5 * e.size.x(), e.size.z(), 8);
}

enum class ScenarioKind { kSingle, kTwoObject };

struct ScenarioObject {
  int catalog_id = 1;
  double mass = 1.0;
  double friction = 0.3;  // object-side coefficient
  Pose pose;
  Twist twist;
};

struct Scenario {
  std::uint64_t seed = 0;
  ScenarioKind kind = ScenarioKind::kSingle;
  std::vector<ScenarioObject> objects;
  double background_friction = 0.2;
  double duration = 3.0;
  double sim_rate = 240.0;
  double frame_rate = 30.0;
  StepParams params;

  double combined_friction(int i) const { return background_friction * objects[i].friction; }
  int steps_per_frame() const { return static_cast<int>(std::lround(sim_rate / frame_rate)); }
  int num_frames() const { return static_cast<int>(std::lround(duration * frame_rate)); }
};

inline RigidBody scenario_body(const ScenarioObject& o) {
  RigidBody b = make_body(catalog_shape(catalog_entry(o.catalog_id)), o.mass);
  b.pose = o.pose;
  b.twist = o.twist;
  b.friction = o.friction;
  return b;
}

/// Samples an upright object moving toward a target near the origin; in
/// two-object scenes a second object rests at the origin.
inline Scenario sample_scenario(std::uint64_t seed, ScenarioKind kind) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };
  std::uniform_int_distribution<int> pick(1, static_cast<int>(object_catalog().size()));

  Scenario sc;
  sc.seed = seed;
  sc.kind = kind;
  auto place = [&](int id, const Vec3& xy) {
    const CatalogEntry& e = catalog_entry(id);
    ScenarioObject o;
    o.catalog_id = id;
    o.mass = e.mass;
    o.friction = uniform(0.1, 0.5);
    const double yaw = uniform(-M_PI, M_PI);
    o.pose.R = exp_so3(Vec3(0, 0, yaw));
    o.pose.p = Vec3(xy.x(), xy.y(), shape_bottom_offset(catalog_shape(e)));
    return o;
  };

  const double radius = uniform(0.3, 0.4);
  const double angle = uniform(-M_PI, M_PI);
  ScenarioObject moving = place(pick(rng), Vec3(radius * std::cos(angle), radius * std::sin(angle), 0));
  const double target_radius = kind == ScenarioKind::kSingle ? 0.1 : 0.02;
  const double target_angle = uniform(-M_PI, M_PI);
  const Vec3 target(target_radius * std::cos(target_angle), target_radius * std::sin(target_angle), 0);
  Vec3 dir = target - moving.pose.p;
  dir.z() = 0.0;
  moving.twist.v = uniform(0.5, 1.0) * dir.normalized();
  const double spin = uniform(2.0, 3.0);
  moving.twist.w = Vec3(0, 0, uniform(-M_PI, M_PI) < 0.0 ? -spin : spin);
  sc.objects.push_back(moving);
  if (kind == ScenarioKind::kTwoObject) sc.objects.push_back(place(pick(rng), Vec3::Zero()));
  return sc;
}

struct TrajectorySample {
  double t = 0.0;
  Pose pose;
  Twist twist;
};

struct GroundTruth {
  double sim_rate = 240.0;
  int steps_per_frame = 8;
  std::vector<double> mu;                           // combined friction per object
  std::vector<std::vector<TrajectorySample>> objects;  // [object][step]

  /// Ground-truth samples at the observation frames.
  std::vector<TrajectorySample> frames(int object, int num_frames) const {
    std::vector<TrajectorySample> out;
    for (int k = 0; k < num_frames; ++k) out.push_back(objects[object].at(static_cast<std::size_t>(k) * steps_per_frame));
    return out;
  }
};

inline World scenario_world(const Scenario& sc) {
  World w;
  w.params = sc.params;
  Plane floor;
  floor.friction = sc.background_friction;
  w.planes.push_back(floor);
  for (const auto& o : sc.objects) w.bodies.push_back(scenario_body(o));
  return w;
}

inline GroundTruth simulate_ground_truth(const Scenario& sc) {
  World w = scenario_world(sc);
  GroundTruth gt;
  gt.sim_rate = sc.sim_rate;
  gt.steps_per_frame = sc.steps_per_frame();
  const int n = static_cast<int>(sc.objects.size());
  gt.objects.resize(n);
  for (int i = 0; i < n; ++i) gt.mu.push_back(sc.combined_friction(i));
  const double dt = 1.0 / sc.sim_rate;
  const int steps = static_cast<int>(std::lround(sc.duration * sc.sim_rate));
  for (int k = 0; k <= steps; ++k) {
    if (k > 0) step(w, dt);
    for (int i = 0; i < n; ++i) gt.objects[i].push_back({k * dt, w.bodies[i].pose, w.bodies[i].twist});
  }
  return gt;
}

struct SimulatedScene {
  Scenario scenario;
  GroundTruth truth;
};

/// Samples and simulates, resampling from a derived seed when the solver fails.
inline SimulatedScene simulate_scene(std::uint64_t seed, ScenarioKind kind, int attempts = 8,
                                     const StepParams& params = {}) {
  for (int a = 0; a < attempts; ++a) {
    Scenario sc = sample_scenario(seed + 0x9E3779B97F4A7C15ULL * a, kind);
    sc.params = params;
    try {
      return {sc, simulate_ground_truth(sc)};
    } catch (const NumericalFailure&) {
    }
  }
  throw NumericalFailure("no stable scenario for seed " + std::to_string(seed));
}

struct CorruptionParams {
  double sigma_p = 1e-3;
  double sigma_R = 0.5 * M_PI / 180.0;
  double outlier_rate = 0.03;
  double miss_rate = 0.05;
  /// Leading frames kept free of outliers and misses so the filter can start.
  int protected_frames = 2;
};

struct ObservationLog {
  double frame_rate = 30.0;
  std::vector<ObservationFrame> frames;
  std::vector<char> outlier;  // evaluation only
  std::vector<char> missing;  // evaluation only
};

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 d(n(rng), n(rng), n(rng));
  while (d.norm() < 1e-12) d = Vec3(n(rng), n(rng), n(rng));
  return d.normalized();
}

/// Downsamples one object's ground truth to frames and corrupts the poses.
/// Every frame consumes the same number of draws, so the rates do not shift
/// the noise of later frames.
inline ObservationLog corrupt(const std::vector<TrajectorySample>& frames, double frame_rate, const CorruptionParams& c,
                              std::uint64_t seed) {
  if (c.sigma_p < 0 || c.sigma_R < 0 || c.outlier_rate < 0 || c.outlier_rate > 1 || c.miss_rate < 0 ||
      c.miss_rate > 1) {
    throw InvalidInput("corruption parameters out of range");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ObservationLog log;
  log.frame_rate = frame_rate;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    Vec6 d;
    for (int i = 0; i < 6; ++i) d(i) = n(rng);
    d.head<3>() *= c.sigma_p;
    d.tail<3>() *= c.sigma_R;
    const double u_out = u(rng), u_miss = u(rng);
    const Vec3 jump_dir = random_unit(rng), rot_axis = random_unit(rng);
    const double jump = 0.3 + 0.7 * u(rng);
    const double angle = (30.0 + 150.0 * u(rng)) * M_PI / 180.0;

    const bool guarded = static_cast<int>(k) < c.protected_frames;
    const bool outlier = !guarded && u_out < c.outlier_rate;
    const bool missing = !guarded && u_miss < c.miss_rate;
    ObservationFrame f;
    f.t = frames[k].t;
    f.pose = (c.sigma_p == 0.0 && c.sigma_R == 0.0) ? frames[k].pose : pose_oplus(frames[k].pose, d);
    if (outlier) f.pose = {f.pose.p + jump * jump_dir, perturb_left(f.pose.R, angle * rot_axis)};
    f.valid = !missing;
    log.frames.push_back(f);
    log.outlier.push_back(outlier);
    log.missing.push_back(missing);
  }
  return log;
}

/// Sequence whose noise matches a filter configuration exactly: process noise
/// S injected after every motion step, observation noise Q, and a start belief
/// whose error is drawn from Sigma0. Used for consistency checks.
struct MatchedRun {
  std::vector<FilterState> truth;  // at each frame
  std::vector<ObservationFrame> frames;
  Belief<13> start;
};

inline MatchedRun simulate_matched(const MotionContext& ctx, const FilterState& initial, const NoiseConfig& cfg,
                                   int num_frames, double frame_rate, int predicts_per_frame, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto draw = [&](const auto& cov) {
    TangentVector13 e = TangentVector13::Zero();
    for (int i = 0; i < cov.rows(); ++i) e(i) = std::sqrt(cov(i, i)) * n(rng);
    return e;
  };
  MatchedRun run;
  const Eigen::Matrix<double, 13, 13> S = process_noise<13>(cfg);
  const Eigen::Matrix<double, 13, 13> P0 = initial_covariance<13>(cfg);
  const Eigen::Matrix<double, 6, 6> Q = observation_noise(cfg);
  const double dt = 1.0 / (frame_rate * predicts_per_frame);
  FilterState x = initial;
  for (int k = 0; k < num_frames; ++k) {
    if (k > 0) {
      for (int i = 0; i < predicts_per_frame; ++i) x = state_boxplus(motion_model(x, dt, ctx), draw(S));
    }
    run.truth.push_back(x);
    ObservationFrame f;
    f.t = k / frame_rate;
    f.pose = pose_oplus(x.pose(), draw(Q).head<6>());
    run.frames.push_back(f);
  }
  run.start.mean = state_boxplus(initial, draw(P0));
  run.start.cov = P0;
  return run;
}

// JSON Lines: one record per line with t, id, p[3], q[4] (w, x, y, z),
// optional twist[6] (w then v), valid, and for ground truth the combined
// friction mu.

inline nlohmann::json pose_record(double t, int id, const Pose& pose, bool valid) {
  const Quat q = pose.R.quaternion();
  return {{"t", t},
          {"id", id},
          {"p", {pose.p.x(), pose.p.y(), pose.p.z()}},
          {"q", {q.w(), q.x(), q.y(), q.z()}},
          {"valid", valid}};
}

struct JsonlRecord {
  double t = 0.0;
  int id = 0;
  Pose pose;
  bool has_twist = false;
  Twist twist;
  bool valid = true;
  std::optional<double> mu;  // combined friction, from "mu" or "theta"
};

inline JsonlRecord parse_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  JsonlRecord r;
  r.t = j.at("t").get<double>();
  r.id = j.value("id", 0);
  const auto p = j.at("p").get<std::vector<double>>();
  const auto q = j.at("q").get<std::vector<double>>();
  if (p.size() != 3 || q.size() != 4) throw InvalidInput("malformed pose record");
  r.pose.p = Vec3(p[0], p[1], p[2]);
  r.pose.R = Rotation::from_quaternion(Quat(q[0], q[1], q[2], q[3]));
  if (j.contains("twist")) {
    const auto tw = j.at("twist").get<std::vector<double>>();
    if (tw.size() != 6) throw InvalidInput("malformed twist");
    r.has_twist = true;
    r.twist.w = Vec3(tw[0], tw[1], tw[2]);
    r.twist.v = Vec3(tw[3], tw[4], tw[5]);
  }
  r.valid = j.value("valid", true);
  if (j.contains("mu")) {
    r.mu = j.at("mu").get<double>();
  } else if (j.contains("theta")) {
    const double th = j.at("theta").get<double>();
    r.mu = th * th;
  }
  return r;
}

inline std::vector<JsonlRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  std::vector<JsonlRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const std::exception& e) {
      throw InvalidInput(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_ground_truth(std::ostream& os, const GroundTruth& gt) {
  for (std::size_t i = 0; i < gt.objects.size(); ++i) {
    for (const auto& s : gt.objects[i]) {
      auto j = pose_record(s.t, static_cast<int>(i), s.pose, true);
      j["twist"] = {s.twist.w.x(), s.twist.w.y(), s.twist.w.z(), s.twist.v.x(), s.twist.v.y(), s.twist.v.z()};
      if (i < gt.mu.size()) j["mu"] = gt.mu[i];
      os << j.dump() << '\n';
    }
  }
}

inline void write_observations(std::ostream& os, const std::vector<ObservationLog>& logs) {
  for (std::size_t i = 0; i < logs.size(); ++i) {
    for (const auto& f : logs[i].frames) os << pose_record(f.t, static_cast<int>(i), f.pose, f.valid).dump() << '\n';
  }
}

inline std::vector<std::vector<JsonlRecord>> split_by_id(const std::vector<JsonlRecord>& records) {
  std::vector<std::vector<JsonlRecord>> out;
  for (const auto& r : records) {
    if (r.id < 0) throw InvalidInput("negative object id");
    if (static_cast<std::size_t>(r.id) >= out.size()) out.resize(r.id + 1);
    out[r.id].push_back(r);
  }
  return out;
}

}  // namespace physekf
