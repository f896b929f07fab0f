#pragma once

// Experiment orchestration: scene generation, observation corruption, joint
// filtering of all objects in a scene, scenario files and a seed-level worker pool.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "physekf/ekf.hpp"
#include "physekf/harness/config.hpp"
#include "physekf/synth.hpp"

namespace physekf::harness {

/// Seed for the corruption of one object, decorrelated from the scene seed.
inline std::uint64_t corruption_seed(std::uint64_t seed, int object) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(object + 1) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Scenario configure_scenario(Scenario sc, const ExperimentConfig& cfg) {
  sc.duration = cfg.duration;
  sc.sim_rate = cfg.sim_rate;
  sc.frame_rate = cfg.frame_rate;
  sc.params = cfg.dynamics;
  return sc;
}

/// Samples and simulates a scene under the config's timing and dynamics,
/// resampling from a derived seed when the solver fails.
inline SimulatedScene generate_scene(std::uint64_t seed, const ExperimentConfig& cfg, int attempts = 8) {
  for (int a = 0; a < attempts; ++a) {
    const Scenario sc = configure_scenario(sample_scenario(seed + 0x9E3779B97F4A7C15ULL * a, cfg.kind), cfg);
    try {
      return {sc, simulate_ground_truth(sc)};
    } catch (const NumericalFailure&) {
    }
  }
  throw NumericalFailure("no stable scenario for seed " + std::to_string(seed));
}

inline std::vector<ObservationLog> observe_scene(const SimulatedScene& scene, std::uint64_t seed,
                                                 const CorruptionParams& c) {
  std::vector<ObservationLog> logs;
  const int frames = scene.scenario.num_frames();
  for (int i = 0; i < static_cast<int>(scene.truth.objects.size()); ++i) {
    logs.push_back(corrupt(scene.truth.frames(i, frames), scene.scenario.frame_rate, c, corruption_seed(seed, i)));
  }
  return logs;
}

/// World for the filters: the scene's bodies on a floor of friction 1, so a
/// body's own coefficient is the combined one.
inline World filter_world(const Scenario& sc) {
  World w = scenario_world(sc);
  for (auto& p : w.planes) p.friction = 1.0;
  return w;
}

inline double initial_theta(const Scenario& sc, int object, FilterMode mode, double theta0) {
  return mode == FilterMode::kKnownFriction ? std::sqrt(sc.combined_friction(object)) : theta0;
}

namespace detail {

/// Lockstep filtering of all objects. With `resume`, records up to frame
/// `resume_frame` are copied from an earlier run and filtering continues from there.
template <int N>
std::vector<std::vector<BeliefRecord>> run_joint(const std::vector<std::vector<ObservationFrame>>& obs,
                                                 const World& base, const std::vector<double>& theta,
                                                 const NoiseConfig& cfg, const FilterOptions& opt,
                                                 const std::vector<std::vector<BeliefRecord>>* resume = nullptr,
                                                 int resume_frame = 1) {
  const int n = static_cast<int>(obs.size());
  std::vector<Belief<N>> b;
  std::vector<std::vector<BeliefRecord>> out(n);
  if (resume) {
    for (int i = 0; i < n; ++i) {
      out[i].assign((*resume)[i].begin(), (*resume)[i].begin() + resume_frame + 1);
      Belief<N> bi;
      bi.mean = out[i].back().mean;
      bi.cov = out[i].back().cov;
      b.push_back(bi);
    }
  }
  for (int i = 0; i < n && !resume; ++i) {
    if (obs[i].size() < 2) throw InitializationFailure("need at least two frames");
    b.push_back(init_belief<N>(obs[i][0], obs[i][1], opt.frame_rate, cfg, theta[i]));
    BeliefRecord r0 = physekf::detail::make_record(obs[i][0].t, b[i]);
    r0.mean.p = obs[i][0].pose.p;
    r0.mean.R = obs[i][0].pose.R;
    out[i].push_back(r0);
    out[i].push_back(physekf::detail::make_record(obs[i][1].t, b[i]));
  }
  // Each object is predicted in a world holding the others at their current means.
  auto context = [&](int i) {
    MotionContext ctx{base, i};
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      RigidBody& body = ctx.world.bodies[j];
      body.pose = b[j].mean.pose();
      body.twist = {b[j].mean.w, b[j].mean.v};
      body.friction = b[j].mean.mu();
    }
    return ctx;
  };
  const double dt = 1.0 / (opt.frame_rate * opt.predicts_per_frame);
  const int frames = static_cast<int>(obs[0].size());
  for (int k = resume ? resume_frame + 1 : 2; k < frames; ++k) {
    std::vector<char> failed(n, 0);
    for (int s = 0; s < opt.predicts_per_frame; ++s) {
      std::vector<MotionContext> ctx;
      for (int i = 0; i < n; ++i) ctx.push_back(context(i));
      for (int i = 0; i < n; ++i) {
        bool f = failed[i];
        physekf::detail::predict_substep<N>(b[i], f, dt, ctx[i], cfg, opt.jacobian);
        failed[i] = f;
      }
    }
    for (int i = 0; i < n; ++i) out[i].push_back(physekf::detail::correct_frame<N>(b[i], obs[i][k], k, failed[i], cfg, opt));
  }
  return out;
}

}  // namespace detail

/// Filters every object of a scene; with one object this is run_filter.
inline std::vector<std::vector<BeliefRecord>> filter_scene(const Scenario& sc,
                                                           const std::vector<std::vector<ObservationFrame>>& obs,
                                                           const NoiseConfig& noise, const FilterOptions& opt,
                                                           const std::vector<double>& theta) {
  if (obs.size() != sc.objects.size() || theta.size() != obs.size()) throw InvalidInput("one log per object required");
  for (const auto& o : obs) {
    if (o.size() != obs[0].size()) throw InvalidInput("observation logs differ in length");
  }
  const World base = filter_world(sc);
  if (opt.mode == FilterMode::kEstimateFriction) return detail::run_joint<13>(obs, base, theta, noise, opt);
  return detail::run_joint<12>(obs, base, theta, noise, opt);
}

/// Prediction from frame `cut` on, reusing the records of a full filter run
/// up to the cut. Equal to filtering with predict_from = cut.
inline std::vector<std::vector<BeliefRecord>> predict_scene(const Scenario& sc,
                                                            const std::vector<std::vector<ObservationFrame>>& obs,
                                                            const NoiseConfig& noise, FilterOptions opt,
                                                            const std::vector<double>& theta,
                                                            const std::vector<std::vector<BeliefRecord>>& filtered,
                                                            int cut) {
  if (cut < 1 || cut >= static_cast<int>(obs.at(0).size())) throw InvalidInput("prediction cut outside the sequence");
  opt.predict_from = cut;
  const World base = filter_world(sc);
  if (opt.mode == FilterMode::kEstimateFriction) {
    return detail::run_joint<13>(obs, base, theta, noise, opt, &filtered, cut);
  }
  return detail::run_joint<12>(obs, base, theta, noise, opt, &filtered, cut);
}

inline std::vector<std::vector<BeliefRecord>> filter_scene(const Scenario& sc, const std::vector<ObservationLog>& logs,
                                                           const ExperimentConfig& cfg, FilterMode mode,
                                                           std::optional<int> predict_from = std::nullopt) {
  std::vector<std::vector<ObservationFrame>> obs;
  std::vector<double> theta;
  for (int i = 0; i < static_cast<int>(logs.size()); ++i) {
    obs.push_back(logs[i].frames);
    theta.push_back(initial_theta(sc, i, mode, cfg.theta0));
  }
  FilterOptions opt = cfg.filter_options(mode, 0.0);
  opt.predict_from = predict_from;
  return filter_scene(sc, obs, cfg.noise(mode), opt, theta);
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results are stored
/// by index, so the output does not depend on scheduling. The first exception
/// (lowest index) is rethrown after all workers finish.
template <class T, class Fn>
std::vector<T> parallel_map(int n, int workers, Fn fn) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        slots[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min(workers, n));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Worker count from a flag value (> 0 wins), else PHYSEKF_WORKERS, else 1.
inline int resolve_workers(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("PHYSEKF_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::logic_error&) {
    }
    throw ConfigError(std::string("PHYSEKF_WORKERS: expected a positive integer, got '") + env + "'");
  }
  return 1;
}

// Scenario files use the config format: [scenario] and one [object.<i>] per body.

inline void write_scenario(const std::string& path, const Scenario& sc) {
  namespace pt = boost::property_tree;
  auto vec = [](const auto& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_double(v[i]);
    return s;
  };
  pt::ptree tree;
  pt::ptree s;
  s.put("seed", sc.seed);
  s.put("kind", sc.kind == ScenarioKind::kSingle ? "single" : "two_object");
  s.put("background_friction", format_double(sc.background_friction));
  s.put("duration", format_double(sc.duration));
  s.put("sim_rate", format_double(sc.sim_rate));
  s.put("frame_rate", format_double(sc.frame_rate));
  s.put("restitution", format_double(sc.params.contact.restitution));
  s.put("baumgarte", format_double(sc.params.contact.baumgarte));
  s.put("margin", format_double(sc.params.margin));
  s.put("max_depth", format_double(sc.params.max_depth));
  tree.push_back({"scenario", s});
  for (std::size_t i = 0; i < sc.objects.size(); ++i) {
    const ScenarioObject& o = sc.objects[i];
    const Quat q = o.pose.R.quaternion();
    pt::ptree ob;
    ob.put("catalog_id", o.catalog_id);
    ob.put("mass", format_double(o.mass));
    ob.put("friction", format_double(o.friction));
    ob.put("p", vec(o.pose.p));
    ob.put("q", vec(Eigen::Vector4d(q.w(), q.x(), q.y(), q.z())));
    ob.put("w", vec(o.twist.w));
    ob.put("v", vec(o.twist.v));
    tree.push_back({"object." + std::to_string(i), ob});
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  pt::write_ini(out, tree);
}

inline Scenario read_scenario(const std::string& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.filename() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  auto numbers = [&](const pt::ptree& sec, const std::string& name, const std::string& key, int n) {
    std::istringstream is(sec.get<std::string>(key));
    std::vector<double> v(n);
    for (double& x : v) {
      if (!(is >> x)) throw ConfigError(path + ": [" + name + "] " + key + ": expected " + std::to_string(n) + " numbers");
    }
    return v;
  };
  Scenario sc;
  try {
    const pt::ptree& s = tree.get_child(pt::ptree::path_type("scenario", '/'));
    sc.seed = s.get<std::uint64_t>("seed");
    sc.kind = s.get<std::string>("kind") == "single" ? ScenarioKind::kSingle : ScenarioKind::kTwoObject;
    sc.background_friction = s.get<double>("background_friction");
    sc.duration = s.get<double>("duration");
    sc.sim_rate = s.get<double>("sim_rate");
    sc.frame_rate = s.get<double>("frame_rate");
    sc.params.contact.restitution = s.get<double>("restitution", sc.params.contact.restitution);
    sc.params.contact.baumgarte = s.get<double>("baumgarte", sc.params.contact.baumgarte);
    sc.params.margin = s.get<double>("margin", sc.params.margin);
    sc.params.max_depth = s.get<double>("max_depth", sc.params.max_depth);
    for (int i = 0;; ++i) {
      const std::string name = "object." + std::to_string(i);
      auto it = tree.find(name);
      if (it == tree.not_found()) break;
      const pt::ptree& ob = it->second;
      ScenarioObject o;
      o.catalog_id = ob.get<int>("catalog_id");
      catalog_entry(o.catalog_id);
      o.mass = ob.get<double>("mass");
      o.friction = ob.get<double>("friction");
      const auto p = numbers(ob, name, "p", 3), q = numbers(ob, name, "q", 4);
      const auto w = numbers(ob, name, "w", 3), v = numbers(ob, name, "v", 3);
      o.pose.p = Vec3(p[0], p[1], p[2]);
      o.pose.R = Rotation::from_quaternion(Quat(q[0], q[1], q[2], q[3]));
      o.twist.w = Vec3(w[0], w[1], w[2]);
      o.twist.v = Vec3(v[0], v[1], v[2]);
      sc.objects.push_back(o);
    }
  } catch (const pt::ptree_error& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (sc.objects.empty()) throw ConfigError(path + ": no [object.0] section");
  return sc;
}

/// Belief records as JSON Lines: the pose fields of the observation format
/// plus twist, theta, mu and the gating outcome.
inline void write_beliefs(std::ostream& os, const std::vector<std::vector<BeliefRecord>>& beliefs) {
  for (std::size_t i = 0; i < beliefs.size(); ++i) {
    for (const auto& r : beliefs[i]) {
      auto j = pose_record(r.t, static_cast<int>(i), r.mean.pose(), true);
      j["twist"] = {r.mean.w.x(), r.mean.w.y(), r.mean.w.z(), r.mean.v.x(), r.mean.v.y(), r.mean.v.z()};
      j["theta"] = r.mean.theta;
      j["mu"] = r.mean.mu();
      j["corrected"] = r.corrected;
      j["accepted"] = r.accepted;
      j["gating_distance"] = r.gating_distance;
      j["failed"] = r.failed;
      os << j.dump() << '\n';
    }
  }
}

/// Observation logs as read back from JSON Lines, one per object id.
inline std::vector<ObservationLog> read_observations(const std::string& path, double frame_rate) {
  std::vector<ObservationLog> logs;
  for (const auto& recs : split_by_id(read_jsonl(path))) {
    ObservationLog log;
    log.frame_rate = frame_rate;
    for (const auto& r : recs) log.frames.push_back({r.t, r.pose, r.valid});
    log.outlier.assign(log.frames.size(), 0);
    log.missing.assign(log.frames.size(), 0);
    for (std::size_t k = 0; k < log.frames.size(); ++k) log.missing[k] = !log.frames[k].valid;
    logs.push_back(std::move(log));
  }
  return logs;
}

}  // namespace physekf::harness
