#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "physekf/synth.hpp"

using namespace physekf;

TEST(SampleScenario, Ranges) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    for (auto kind : {ScenarioKind::kSingle, ScenarioKind::kTwoObject}) {
      const Scenario sc = sample_scenario(seed, kind);
      ASSERT_EQ(sc.objects.size(), kind == ScenarioKind::kSingle ? 1u : 2u);
      const ScenarioObject& o = sc.objects[0];
      EXPECT_GE(o.twist.v.norm(), 0.5);
      EXPECT_LE(o.twist.v.norm(), 1.0);
      EXPECT_GE(o.twist.w.norm(), 2.0);
      EXPECT_LE(o.twist.w.norm(), 3.0);
      EXPECT_EQ(o.twist.w.head<2>().norm(), 0.0);
      const double r = o.pose.p.head<2>().norm();
      EXPECT_GE(r, 0.3);
      EXPECT_LE(r, 0.4);
      EXPECT_GE(o.friction, 0.1);
      EXPECT_LE(o.friction, 0.5);
      EXPECT_LT((o.pose.R.matrix().col(2) - Vec3::UnitZ()).norm(), 1e-12);
      if (kind == ScenarioKind::kTwoObject) {
        EXPECT_EQ(sc.objects[1].twist.v.norm(), 0.0);
        EXPECT_EQ(sc.objects[1].pose.p.head<2>().norm(), 0.0);
      }
    }
  }
}

TEST(SampleScenario, AimsAtTargetCircle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scenario sc = sample_scenario(seed, ScenarioKind::kSingle);
    const Vec3 p = sc.objects[0].pose.p;
    const Vec3 d = sc.objects[0].twist.v.normalized();
    const Vec3 to_center = -Vec3(p.x(), p.y(), 0);
    // distance from the origin to the line of motion is at most the target radius
    const double miss = (to_center - to_center.dot(d) * d).norm();
    EXPECT_LE(miss, 0.1 + 1e-12);
  }
}

TEST(SampleScenario, Deterministic) {
  const Scenario a = sample_scenario(42, ScenarioKind::kTwoObject);
  const Scenario b = sample_scenario(42, ScenarioKind::kTwoObject);
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    EXPECT_EQ(a.objects[i].catalog_id, b.objects[i].catalog_id);
    EXPECT_EQ(a.objects[i].pose.p, b.objects[i].pose.p);
    EXPECT_TRUE(a.objects[i].pose.R == b.objects[i].pose.R);
    EXPECT_EQ(a.objects[i].twist.stacked(), b.objects[i].twist.stacked());
    EXPECT_EQ(a.objects[i].friction, b.objects[i].friction);
  }
}

TEST(SampleScenario, MeanCombinedFriction) {
  double sum = 0.0;
  const int n = 10000;
  for (int s = 0; s < n; ++s) sum += sample_scenario(s, ScenarioKind::kSingle).combined_friction(0);
  EXPECT_NEAR(sum / n, 0.06, 0.005);
}

TEST(Catalog, ShapesAreValid) {
  for (const auto& e : object_catalog()) {
    const Shape s = catalog_shape(e);
    EXPECT_NEAR(shape_bottom_offset(s), 0.5 * e.size.z(), 1e-12) << e.name;
    EXPECT_GT(shape_inertia(s, e.mass).determinant(), 0.0) << e.name;
  }
  EXPECT_EQ(catalog_entry(3).mass, 0.514);
  EXPECT_EQ(catalog_entry(3).friction, 0.335);
  EXPECT_THROW(catalog_entry(99), InvalidInput);
}

namespace {

Scenario straight_slide(double mu_object, double speed) {
  Scenario sc;
  ScenarioObject o;
  o.catalog_id = 3;
  o.mass = catalog_entry(3).mass;
  o.friction = mu_object;
  o.pose.p = Vec3(0, 0, shape_bottom_offset(catalog_shape(catalog_entry(3))));
  o.twist.v = Vec3(speed, 0, 0);
  sc.objects.push_back(o);
  return sc;
}

}  // namespace

TEST(SimulateGroundTruth, StopsBeforeCoulombTime) {
  const Scenario sc = straight_slide(0.3, 1.0);  // combined 0.06
  const GroundTruth gt = simulate_ground_truth(sc);
  ASSERT_EQ(gt.objects[0].size(), 721u);
  const double limit = 1.0 / (0.06 * 9.81) * 1.05;
  for (const auto& s : gt.objects[0]) {
    if (s.t >= limit) {
      EXPECT_LT(s.twist.v.norm(), 1e-6) << s.t;
    }
  }
  EXPECT_EQ(gt.frames(0, sc.num_frames()).size(), 90u);
}

TEST(SimulateGroundTruth, RestingIsStatic) {
  const Scenario sc = straight_slide(0.3, 0.0);
  const GroundTruth gt = simulate_ground_truth(sc);
  const auto frames = gt.frames(0, 90);
  for (const auto& f : frames) {
    EXPECT_LT((f.pose.p - frames[0].pose.p).norm(), 1e-6);
    EXPECT_LT(rotation_angle_between(f.pose.R, frames[0].pose.R), 1e-6);
  }
}

TEST(SimulateGroundTruth, HeadOnMomentum) {
  Scenario sc;
  for (double x : {-0.2, 0.0}) {
    ScenarioObject o;
    o.catalog_id = 16;
    o.mass = catalog_entry(16).mass;
    o.friction = 0.0;
    o.pose.p = Vec3(x, 0, 0.1);
    sc.objects.push_back(o);
  }
  sc.objects[0].twist.v = Vec3(1.0, 0, 0);
  sc.duration = 0.5;
  const GroundTruth gt = simulate_ground_truth(sc);
  bool collided = false;
  for (std::size_t k = 0; k + 1 < gt.objects[0].size(); ++k) {
    auto momentum = [&](std::size_t s) {
      return gt.objects[0][s].twist.v.x() * sc.objects[0].mass + gt.objects[1][s].twist.v.x() * sc.objects[1].mass;
    };
    EXPECT_NEAR(momentum(k + 1), momentum(k), 1e-5);
    collided = collided || gt.objects[1][k + 1].twist.v.x() > 0.1;
  }
  EXPECT_TRUE(collided);
}

TEST(SimulateScene, Deterministic) {
  const auto a = simulate_scene(5, ScenarioKind::kSingle);
  const auto b = simulate_scene(5, ScenarioKind::kSingle);
  std::ostringstream sa, sb;
  write_ground_truth(sa, a.truth);
  write_ground_truth(sb, b.truth);
  EXPECT_EQ(sa.str(), sb.str());
}

namespace {

std::vector<TrajectorySample> still_frames(int n) {
  std::vector<TrajectorySample> f(n);
  for (int k = 0; k < n; ++k) {
    f[k].t = k / 30.0;
    f[k].pose = {Vec3(0.1, 0.2, 0.3), exp_so3(Vec3(0, 0, 0.7))};
  }
  return f;
}

}  // namespace

TEST(Corrupt, ZeroNoiseIsIdentity) {
  const auto frames = still_frames(90);
  CorruptionParams c;
  c.sigma_p = c.sigma_R = c.outlier_rate = c.miss_rate = 0.0;
  const ObservationLog log = corrupt(frames, 30.0, c, 1);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    EXPECT_EQ(log.frames[k].pose.p, frames[k].pose.p);
    EXPECT_TRUE(log.frames[k].pose.R == frames[k].pose.R);
    EXPECT_TRUE(log.frames[k].valid);
    EXPECT_EQ(log.frames[k].t, frames[k].t);
  }
}

TEST(Corrupt, PositionNoiseStatistics) {
  const auto frames = still_frames(10000);
  CorruptionParams c;
  c.outlier_rate = c.miss_rate = 0.0;
  const ObservationLog log = corrupt(frames, 30.0, c, 2);
  double ss = 0.0;
  for (std::size_t k = 0; k < frames.size(); ++k) ss += (log.frames[k].pose.p - frames[k].pose.p).squaredNorm();
  const double std = std::sqrt(ss / (3.0 * frames.size()));
  EXPECT_NEAR(std, 1e-3, 0.03e-3);
}

TEST(Corrupt, MissesAndOutliers) {
  const auto frames = still_frames(300);
  CorruptionParams c;
  c.miss_rate = 1.0;
  c.protected_frames = 0;
  for (const auto& f : corrupt(frames, 30.0, c, 3).frames) EXPECT_FALSE(f.valid);

  CorruptionParams o;
  o.outlier_rate = 0.3;
  o.miss_rate = 0.0;
  const ObservationLog log = corrupt(frames, 30.0, o, 4);
  int count = 0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (!log.outlier[k]) continue;
    ++count;
    EXPECT_GE((log.frames[k].pose.p - frames[k].pose.p).norm(), 0.3 - 0.01);
    EXPECT_GE(rotation_angle_between(log.frames[k].pose.R, frames[k].pose.R), M_PI / 6 - 0.05);
  }
  EXPECT_GT(count, 50);
  EXPECT_FALSE(log.outlier[0] || log.outlier[1]);
  EXPECT_THROW(corrupt(frames, 30.0, CorruptionParams{-1.0}, 1), InvalidInput);
}

TEST(Corrupt, RatesDoNotShiftNoise) {
  const auto frames = still_frames(50);
  CorruptionParams a;
  a.outlier_rate = a.miss_rate = 0.0;
  CorruptionParams b = a;
  b.miss_rate = 0.5;
  const auto la = corrupt(frames, 30.0, a, 9);
  const auto lb = corrupt(frames, 30.0, b, 9);
  for (std::size_t k = 0; k < frames.size(); ++k) EXPECT_EQ(la.frames[k].pose.p, lb.frames[k].pose.p);
}

TEST(Jsonl, RoundTrip) {
  const auto scene = simulate_scene(3, ScenarioKind::kTwoObject);
  std::ostringstream os;
  write_ground_truth(os, scene.truth);
  std::istringstream is(os.str());
  std::string line;
  std::vector<JsonlRecord> recs;
  while (std::getline(is, line)) recs.push_back(parse_record(line));
  const auto by_id = split_by_id(recs);
  ASSERT_EQ(by_id.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    ASSERT_EQ(by_id[i].size(), scene.truth.objects[i].size());
    for (std::size_t k = 0; k < by_id[i].size(); k += 37) {
      EXPECT_EQ(by_id[i][k].pose.p, scene.truth.objects[i][k].pose.p);
      EXPECT_LT(rotation_angle_between(by_id[i][k].pose.R, scene.truth.objects[i][k].pose.R), 1e-15);
      EXPECT_EQ(by_id[i][k].twist.v, scene.truth.objects[i][k].twist.v);
    }
  }
  EXPECT_THROW(parse_record("{\"t\": 0, \"p\": [1, 2]}"), std::exception);
}
