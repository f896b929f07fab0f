#pragma once

// Experiment runs over a seed list and their CSV tables.
//
// Every table starts with comment lines: the schema version, the table name,
// the seeds and the fully resolved config. Column sets are fixed per schema
// version.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "physekf/harness/config.hpp"
#include "physekf/harness/metrics.hpp"
#include "physekf/harness/pipeline.hpp"

namespace physekf::harness {

inline constexpr int kReportSchema = 1;

struct GatingStats {
  int observed = 0;  // frames whose measurement reached the gate
  int accepted = 0;
  int outliers = 0;  // injected outliers among the observed frames
  int outliers_rejected = 0;
  int clean_rejected = 0;
};

inline GatingStats gating_stats(const std::vector<BeliefRecord>& beliefs, const ObservationLog& log) {
  GatingStats g;
  for (std::size_t k = 0; k < beliefs.size(); ++k) {
    if (!beliefs[k].corrected) continue;
    ++g.observed;
    const bool outlier = k < log.outlier.size() && log.outlier[k];
    if (beliefs[k].accepted) ++g.accepted;
    if (outlier) {
      ++g.outliers;
      if (!beliefs[k].accepted) ++g.outliers_rejected;
    } else if (!beliefs[k].accepted) {
      ++g.clean_rejected;
    }
  }
  return g;
}

struct ObjectResult {
  std::uint64_t seed = 0;
  int object = 0;
  int catalog_id = 0;
  double mu_gt = 0.0;
  std::vector<ErrorSummary> filter, predict, observation;  // per cut point
  std::vector<double> recall_filter_p, recall_observation_p, recall_filter_R, recall_observation_R;
  double terminal_mu = 0.0;
  GatingStats gating;
  int failed_frames = 0;
};

inline std::vector<double> degrees_to_radians(const std::vector<double>& deg) {
  std::vector<double> out;
  for (double d : deg) out.push_back(d * M_PI / 180.0);
  return out;
}

/// Simulates, corrupts, filters and predicts one seed; evaluates every object.
inline std::vector<ObjectResult> run_sequence(std::uint64_t seed, const ExperimentConfig& cfg) {
  const SimulatedScene scene = generate_scene(seed, cfg);
  const std::vector<ObservationLog> logs = observe_scene(scene, seed, cfg.corruption);
  const int frames = scene.scenario.num_frames();
  std::vector<std::vector<ObservationFrame>> obs;
  std::vector<double> theta;
  for (int i = 0; i < static_cast<int>(logs.size()); ++i) {
    obs.push_back(logs[i].frames);
    theta.push_back(initial_theta(scene.scenario, i, cfg.mode, cfg.theta0));
  }
  const FilterOptions opt = cfg.filter_options(cfg.mode, 0.0);
  const auto filtered = filter_scene(scene.scenario, obs, cfg.noise(), opt, theta);
  // Prediction needs two frames to initialize, so cut 0 predicts from frame 1.
  std::vector<std::vector<std::vector<BeliefRecord>>> predicted;
  for (int cut : cfg.cut_points) {
    predicted.push_back(predict_scene(scene.scenario, obs, cfg.noise(), opt, theta, filtered, std::max(cut, 1)));
  }

  std::vector<ObjectResult> out;
  for (int i = 0; i < static_cast<int>(logs.size()); ++i) {
    ObjectResult r;
    r.seed = seed;
    r.object = i;
    r.catalog_id = scene.scenario.objects[i].catalog_id;
    r.mu_gt = scene.truth.mu[i];
    const auto gt = scene.truth.frames(i, frames);
    const auto est = estimates_from_beliefs(filtered[i]);
    const auto fd = finite_difference_estimates(logs[i].frames);
    for (std::size_t c = 0; c < cfg.cut_points.size(); ++c) {
      const int cut = cfg.cut_points[c];
      r.filter.push_back(trajectory_errors(est, gt, r.mu_gt, cut));
      r.predict.push_back(trajectory_errors(estimates_from_beliefs(predicted[c][i]), gt, r.mu_gt, cut));
      r.observation.push_back(trajectory_errors(fd, gt, r.mu_gt, cut));
    }
    const auto rot = degrees_to_radians(cfg.recall_thresholds_deg);
    r.recall_filter_p = recall_curve(est, gt, cfg.recall_thresholds, RecallMetric::kPosition);
    r.recall_observation_p = recall_curve(fd, gt, cfg.recall_thresholds, RecallMetric::kPosition);
    r.recall_filter_R = recall_curve(est, gt, rot, RecallMetric::kRotation);
    r.recall_observation_R = recall_curve(fd, gt, rot, RecallMetric::kRotation);
    r.terminal_mu = filtered[i].back().mean.mu();
    r.gating = gating_stats(filtered[i], logs[i]);
    for (const auto& b : filtered[i]) r.failed_frames += b.failed;
    out.push_back(std::move(r));
  }
  return out;
}

/// Runs every seed of the config; results are ordered by seed, then object.
inline std::vector<ObjectResult> run_experiment(const ExperimentConfig& cfg, int workers) {
  auto per_seed = parallel_map<std::vector<ObjectResult>>(static_cast<int>(cfg.seeds.size()), workers,
                                                          [&](int i) { return run_sequence(cfg.seeds[i], cfg); });
  std::vector<ObjectResult> out;
  for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
  std::stable_sort(out.begin(), out.end(), [](const ObjectResult& a, const ObjectResult& b) {
    return a.seed != b.seed ? a.seed < b.seed : a.object < b.object;
  });
  return out;
}

struct SweepRow {
  std::uint64_t seed = 0;
  int object = 0;
  std::string multiplier;
  double theta0 = 0.0;
  double terminal_mu = 0.0;
  double mu_gt = 0.0;
  double error() const { return std::abs(terminal_mu - mu_gt); }
};

inline double sweep_theta0(const std::string& multiplier, double mu_gt, double mean_friction) {
  if (multiplier == "mean") return std::sqrt(mean_friction);
  return std::sqrt(std::stod(multiplier) * mu_gt);
}

/// Terminal friction error of the friction-estimating filter for each
/// initialization multiplier of the ground-truth friction.
inline std::vector<SweepRow> friction_sweep(const ExperimentConfig& cfg, const std::vector<std::string>& multipliers,
                                            int workers) {
  auto per_seed = parallel_map<std::vector<SweepRow>>(static_cast<int>(cfg.seeds.size()), workers, [&](int s) {
    const std::uint64_t seed = cfg.seeds[s];
    const SimulatedScene scene = generate_scene(seed, cfg);
    const auto logs = observe_scene(scene, seed, cfg.corruption);
    std::vector<std::vector<ObservationFrame>> obs;
    for (const auto& l : logs) obs.push_back(l.frames);
    std::vector<SweepRow> rows;
    for (const std::string& m : multipliers) {
      std::vector<double> theta;
      for (double mu : scene.truth.mu) theta.push_back(sweep_theta0(m, mu, cfg.mean_friction));
      const auto beliefs = filter_scene(scene.scenario, obs, cfg.noise(FilterMode::kEstimateFriction),
                                        cfg.filter_options(FilterMode::kEstimateFriction, 0.0), theta);
      for (int i = 0; i < static_cast<int>(beliefs.size()); ++i) {
        rows.push_back({seed, i, m, theta[i], beliefs[i].back().mean.mu(), scene.truth.mu[i]});
      }
    }
    return rows;
  });
  std::vector<SweepRow> out;
  for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// CSV output

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

inline void write_preamble(std::ostream& os, const std::string& table, const ExperimentConfig& cfg) {
  os << "# schema: physekf-report/" << kReportSchema << "\n# table: " << table << "\n# seeds:";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? "," : " ") << cfg.seeds[i];
  os << "\n";
  std::istringstream ini(resolved_config(cfg));
  std::string line;
  while (std::getline(ini, line)) os << "# " << line << "\n";
}

inline std::ofstream open_table(const std::filesystem::path& dir, const std::string& table, const ExperimentConfig& cfg) {
  std::ofstream os(dir / (table + ".csv"));
  if (!os) throw ConfigError("cannot write " + (dir / (table + ".csv")).string());
  write_preamble(os, table, cfg);
  return os;
}

inline constexpr const char* kErrorColumns = "position,rotation,linear_velocity,angular_velocity,friction";

inline std::string error_cells(const ErrorSummary& e) {
  return num(e.position) + "," + num(e.rotation) + "," + num(e.linear_velocity) + "," + num(e.angular_velocity) + "," +
         num(e.friction);
}

inline std::string group_name(const ObjectResult& r, bool by_object) {
  return by_object ? catalog_entry(r.catalog_id).name : "all";
}

/// Writes errors.csv, recall.csv, friction.csv, gating.csv and summary.csv.
inline void write_report(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                         const std::vector<ObjectResult>& results, bool group_by_object) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_table(dir, "errors", cfg);
    os << "seed,object,catalog_id,method,cut," << kErrorColumns << "\n";
    for (const auto& r : results) {
      for (std::size_t c = 0; c < cfg.cut_points.size(); ++c) {
        const std::string head =
            std::to_string(r.seed) + "," + std::to_string(r.object) + "," + std::to_string(r.catalog_id) + ",";
        const std::string cut = "," + std::to_string(cfg.cut_points[c]) + ",";
        os << head << "filter" << cut << error_cells(r.filter[c]) << "\n";
        os << head << "predict" << cut << error_cells(r.predict[c]) << "\n";
        os << head << "observation" << cut << error_cells(r.observation[c]) << "\n";
      }
    }
  }
  {
    auto os = open_table(dir, "recall", cfg);
    os << "seed,object,method,metric,threshold,recall\n";
    for (const auto& r : results) {
      auto rows = [&](const char* method, const char* metric, const std::vector<double>& th,
                      const std::vector<double>& v) {
        for (std::size_t i = 0; i < th.size(); ++i) {
          os << r.seed << "," << r.object << "," << method << "," << metric << "," << num(th[i]) << "," << num(v[i])
             << "\n";
        }
      };
      rows("filter", "position_m", cfg.recall_thresholds, r.recall_filter_p);
      rows("observation", "position_m", cfg.recall_thresholds, r.recall_observation_p);
      rows("filter", "rotation_deg", cfg.recall_thresholds_deg, r.recall_filter_R);
      rows("observation", "rotation_deg", cfg.recall_thresholds_deg, r.recall_observation_R);
    }
  }
  {
    auto os = open_table(dir, "friction", cfg);
    os << "seed,object,catalog_id,mu_gt,terminal_mu,error,zero_baseline_error\n";
    for (const auto& r : results) {
      os << r.seed << "," << r.object << "," << r.catalog_id << "," << num(r.mu_gt) << "," << num(r.terminal_mu) << ","
         << num(std::abs(r.terminal_mu - r.mu_gt)) << "," << num(zero_friction_error(r.mu_gt)) << "\n";
    }
  }
  {
    auto os = open_table(dir, "gating", cfg);
    os << "seed,object,observed,accepted,outliers,outliers_rejected,clean_rejected,failed_frames\n";
    for (const auto& r : results) {
      const GatingStats& g = r.gating;
      os << r.seed << "," << r.object << "," << g.observed << "," << g.accepted << "," << g.outliers << ","
         << g.outliers_rejected << "," << g.clean_rejected << "," << r.failed_frames << "\n";
    }
  }
  {
    auto os = open_table(dir, "summary", cfg);
    os << "group,method,cut,metric,count,median,q1,q3,mean\n";
    std::map<std::string, std::vector<const ObjectResult*>> groups;
    for (const auto& r : results) groups[group_name(r, group_by_object)].push_back(&r);
    const char* metrics[] = {"position", "rotation", "linear_velocity", "angular_velocity", "friction"};
    auto field = [](const ErrorSummary& e, int m) {
      const double v[] = {e.position, e.rotation, e.linear_velocity, e.angular_velocity, e.friction};
      return v[m];
    };
    for (const auto& [group, members] : groups) {
      for (const char* method : {"filter", "predict", "observation"}) {
        for (std::size_t c = 0; c < cfg.cut_points.size(); ++c) {
          for (int m = 0; m < 5; ++m) {
            std::vector<double> v;
            for (const ObjectResult* r : members) {
              const auto& series = std::string(method) == "filter"    ? r->filter
                                   : std::string(method) == "predict" ? r->predict
                                                                      : r->observation;
              v.push_back(field(series[c], m));
            }
            const Aggregate a = aggregate(v);
            os << group << "," << method << "," << cfg.cut_points[c] << "," << metrics[m] << "," << a.count << ","
               << num(a.median) << "," << num(a.q1) << "," << num(a.q3) << "," << num(a.mean) << "\n";
          }
        }
      }
      std::vector<double> terminal, zero;
      for (const ObjectResult* r : members) {
        terminal.push_back(std::abs(r->terminal_mu - r->mu_gt));
        zero.push_back(zero_friction_error(r->mu_gt));
      }
      for (const auto& [method, v] : {std::pair{"filter", terminal}, std::pair{"zero_baseline", zero}}) {
        const Aggregate a = aggregate(v);
        os << group << "," << method << ",terminal,friction," << a.count << "," << num(a.median) << "," << num(a.q1)
           << "," << num(a.q3) << "," << num(a.mean) << "\n";
      }
    }
  }
}

inline void write_sweep(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::vector<SweepRow>& rows) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_table(dir, "sweep", cfg);
    os << "seed,object,multiplier,theta0,mu_gt,terminal_mu,error\n";
    for (const auto& r : rows) {
      os << r.seed << "," << r.object << "," << r.multiplier << "," << num(r.theta0) << "," << num(r.mu_gt) << ","
         << num(r.terminal_mu) << "," << num(r.error()) << "\n";
    }
  }
  auto os = open_table(dir, "sweep_summary", cfg);
  os << "multiplier,count,median,q1,q3,mean\n";
  for (const std::string& m : cfg.sweep_multipliers) {
    std::vector<double> v;
    for (const auto& r : rows) {
      if (r.multiplier == m) v.push_back(r.error());
    }
    const Aggregate a = aggregate(v);
    os << m << "," << a.count << "," << num(a.median) << "," << num(a.q1) << "," << num(a.q3) << "," << num(a.mean)
       << "\n";
  }
}

/// Estimates read from JSON Lines, aligned to ground-truth samples by time.
/// Records without a twist get finite-difference velocities.
inline std::vector<FrameEstimate> align_estimates(const std::vector<JsonlRecord>& est,
                                                  const std::vector<JsonlRecord>& gt,
                                                  std::vector<TrajectorySample>& gt_out) {
  const bool has_twist = std::all_of(est.begin(), est.end(), [](const JsonlRecord& r) { return r.has_twist; });
  std::vector<ObservationFrame> frames;
  for (const auto& r : est) frames.push_back({r.t, r.pose, r.valid});
  std::vector<FrameEstimate> out = finite_difference_estimates(frames);
  gt_out.clear();
  std::size_t j = 0;
  for (std::size_t k = 0; k < est.size(); ++k) {
    if (has_twist) out[k].twist = est[k].twist;
    if (est[k].mu) out[k].mu = est[k].mu;
    while (j + 1 < gt.size() && std::abs(gt[j + 1].t - est[k].t) <= std::abs(gt[j].t - est[k].t)) ++j;
    if (gt.empty() || std::abs(gt[j].t - est[k].t) > 1e-6) {
      throw InvalidInput("no ground-truth sample at t = " + num(est[k].t));
    }
    gt_out.push_back({gt[j].t, gt[j].pose, gt[j].twist});
  }
  return out;
}

/// Per-object errors of an estimate file against a ground-truth file at each cut point.
inline void write_eval(std::ostream& os, const ExperimentConfig& cfg, const std::vector<JsonlRecord>& estimates,
                       const std::vector<JsonlRecord>& truth) {
  const auto est = split_by_id(estimates);
  const auto gt = split_by_id(truth);
  if (est.size() != gt.size()) throw InvalidInput("estimate and ground truth have different objects");
  write_preamble(os, "eval", cfg);
  os << "object,cut," << kErrorColumns << "\n";
  for (std::size_t i = 0; i < est.size(); ++i) {
    std::vector<TrajectorySample> g;
    const auto e = align_estimates(est[i], gt[i], g);
    const double mu_gt = gt[i].empty() || !gt[i][0].mu ? 0.0 : *gt[i][0].mu;
    for (int cut : cfg.cut_points) {
      if (cut >= static_cast<int>(e.size())) throw InvalidInput("cut point " + std::to_string(cut) + " beyond the sequence");
      os << i << "," << cut << "," << error_cells(trajectory_errors(e, g, mu_gt, cut)) << "\n";
    }
  }
}

}  // namespace physekf::harness
