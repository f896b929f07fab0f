#pragma once

// Experiment configuration read from an INI file.
//
//   [experiment]   kind, seeds, duration, sim_rate
//   [schedule]     frame_rate, predict_rate
//   [corruption]   sigma_p, sigma_R_deg, outlier_rate, miss_rate, protected_frames
//   [dynamics]     restitution, baumgarte, margin, max_depth
//   [filter]       mode, dataset, theta0, theta_floor, jacobian_step
//   [noise.ekfphys], [noise.ekfphys-f]   NoiseConfig fields; missing keys fall
//                  back to the dataset preset
//   [eval]         cut_points, recall_thresholds (m), recall_thresholds_deg
//   [sweep]        multipliers, mean_friction

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "physekf/ekf.hpp"
#include "physekf/synth.hpp"

namespace physekf::harness {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
  ScenarioKind kind = ScenarioKind::kSingle;
  std::vector<std::uint64_t> seeds = default_seeds();
  double duration = 3.0;
  double sim_rate = 240.0;
  double frame_rate = 30.0;
  double predict_rate = 60.0;
  CorruptionParams corruption;
  StepParams dynamics;
  FilterMode mode = FilterMode::kEstimateFriction;
  Dataset dataset = Dataset::kSynthetic;
  double theta0 = 0.0;
  JacobianOptions jacobian;
  NoiseConfig noise_estimate = preset_noise(Dataset::kSynthetic, FilterMode::kEstimateFriction);
  NoiseConfig noise_known = preset_noise(Dataset::kSynthetic, FilterMode::kKnownFriction);
  std::vector<int> cut_points = {0, 15, 30, 45, 60, 75};
  std::vector<double> recall_thresholds = {0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04, 0.045, 0.05};
  std::vector<double> recall_thresholds_deg = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::string> sweep_multipliers = {"0", "0.5", "1", "2", "mean"};
  double mean_friction = 0.06;

  static std::vector<std::uint64_t> default_seeds() {
    std::vector<std::uint64_t> s;
    for (std::uint64_t i = 0; i < 20; ++i) s.push_back(i);
    return s;
  }

  const NoiseConfig& noise(FilterMode m) const { return m == FilterMode::kEstimateFriction ? noise_estimate : noise_known; }
  const NoiseConfig& noise() const { return noise(mode); }
  int predicts_per_frame() const { return static_cast<int>(std::lround(predict_rate / frame_rate)); }
  int num_frames() const { return static_cast<int>(std::lround(duration * frame_rate)); }

  FilterOptions filter_options(FilterMode m, double theta) const {
    FilterOptions o;
    o.mode = m;
    o.frame_rate = frame_rate;
    o.predicts_per_frame = predicts_per_frame();
    o.theta0 = theta;
    o.jacobian = jacobian;
    return o;
  }
};

inline const char* mode_name(FilterMode m) { return m == FilterMode::kEstimateFriction ? "ekfphys" : "ekfphys-f"; }

inline FilterMode parse_mode(const std::string& s) {
  if (s == "ekfphys") return FilterMode::kEstimateFriction;
  if (s == "ekfphys-f") return FilterMode::kKnownFriction;
  throw ConfigError("unknown mode '" + s + "' (expected ekfphys or ekfphys-f)");
}

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

/// Line numbers of `key` entries per section, for diagnostics.
inline std::map<std::string, int> key_lines(const std::string& path) {
  std::map<std::string, int> lines;
  std::ifstream in(path);
  std::string line, section;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == ';' || line[b] == '#') continue;
    if (line[b] == '[') {
      section = line.substr(b + 1, line.find(']') - b - 1);
      lines[section] = n;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(b, eq - b);
    key.erase(key.find_last_not_of(" \t") + 1);
    lines[section + "." + key] = n;
  }
  return lines;
}

class Reader {
 public:
  Reader(const boost::property_tree::ptree& tree, std::string path, std::map<std::string, int> lines)
      : tree_(tree), path_(std::move(path)), lines_(std::move(lines)) {}

  [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& msg) const {
    const std::string field = key.empty() ? section : section + "." + key;
    auto it = lines_.find(field);
    std::string where = path_;
    if (it != lines_.end()) where += ":" + std::to_string(it->second);
    throw ConfigError(where + ": [" + section + "]" + (key.empty() ? "" : " " + key) + ": " + msg);
  }

  const boost::property_tree::ptree* section(const std::string& name) const {
    auto it = tree_.find(name);
    return it == tree_.not_found() ? nullptr : &it->second;
  }

  bool has(const std::string& sec, const std::string& key) const {
    const auto* s = section(sec);
    return s && s->find(key) != s->not_found();
  }

  std::string text(const std::string& sec, const std::string& key) const {
    std::string v = section(sec)->get<std::string>(key);
    const auto c = v.find_first_of(";#");
    if (c != std::string::npos) v.erase(c);
    v.erase(v.find_last_not_of(" \t") + 1);
    return v;
  }

  double number(const std::string& sec, const std::string& key, double lo, double hi) const {
    const std::string v = text(sec, key);
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      fail(sec, key, "expected a number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(x)) fail(sec, key, "expected a number, got '" + v + "'");
    if (x < lo || x > hi) fail(sec, key, "value " + v + " outside [" + format_double(lo) + ", " + format_double(hi) + "]");
    return x;
  }

  void read(const std::string& sec, const std::string& key, double& out, double lo = -1e300, double hi = 1e300) const {
    if (has(sec, key)) out = number(sec, key, lo, hi);
  }

  void read(const std::string& sec, const std::string& key, int& out, int lo, int hi) const {
    if (!has(sec, key)) return;
    const double x = number(sec, key, lo, hi);
    if (x != std::floor(x)) fail(sec, key, "expected an integer");
    out = static_cast<int>(x);
  }

  std::vector<std::string> list(const std::string& sec, const std::string& key) const {
    std::vector<std::string> items;
    std::stringstream ss(text(sec, key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      if (b == std::string::npos) fail(sec, key, "empty list item");
      item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
      items.push_back(item);
    }
    if (items.empty()) fail(sec, key, "empty list");
    return items;
  }

 private:
  const boost::property_tree::ptree& tree_;
  std::string path_;
  std::map<std::string, int> lines_;
};

inline const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::set<std::string> noise = {"s_state",  "s_theta",  "q_p",      "q_R",          "sigma0_p", "sigma0_R",
                                              "sigma0_v", "sigma0_w", "sigma0_theta", "zeta"};
  static const std::map<std::string, std::set<std::string>> keys = {
      {"experiment", {"kind", "seeds", "duration", "sim_rate"}},
      {"schedule", {"frame_rate", "predict_rate"}},
      {"corruption", {"sigma_p", "sigma_R_deg", "outlier_rate", "miss_rate", "protected_frames"}},
      {"dynamics", {"restitution", "baumgarte", "margin", "max_depth"}},
      {"filter", {"mode", "dataset", "theta0", "theta_floor", "jacobian_step"}},
      {"noise.ekfphys", noise},
      {"noise.ekfphys-f", noise},
      {"eval", {"cut_points", "recall_thresholds", "recall_thresholds_deg"}},
      {"sweep", {"multipliers", "mean_friction"}},
  };
  return keys;
}

inline NoiseConfig read_noise(const Reader& r, const std::string& sec, NoiseConfig c) {
  r.read(sec, "s_state", c.s_state, 0.0);
  r.read(sec, "s_theta", c.s_theta, 0.0);
  r.read(sec, "q_p", c.q_p, 0.0);
  r.read(sec, "q_R", c.q_R, 0.0);
  r.read(sec, "sigma0_p", c.sigma0_p, 0.0);
  r.read(sec, "sigma0_R", c.sigma0_R, 0.0);
  r.read(sec, "sigma0_v", c.sigma0_v, 0.0);
  r.read(sec, "sigma0_w", c.sigma0_w, 0.0);
  r.read(sec, "sigma0_theta", c.sigma0_theta, 0.0);
  r.read(sec, "zeta", c.zeta, 0.0);
  return c;
}

inline std::vector<std::uint64_t> parse_seeds(const Reader& r) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& item : r.list("experiment", "seeds")) {
    try {
      std::size_t used = 0;
      const auto dash = item.find('-', 1);
      if (dash == std::string::npos) {
        seeds.push_back(std::stoull(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } else {
        const std::uint64_t a = std::stoull(item.substr(0, dash));
        const std::uint64_t b = std::stoull(item.substr(dash + 1), &used);
        if (used != item.size() - dash - 1 || b < a || b - a > 1000000) throw std::invalid_argument(item);
        for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
      }
    } catch (const std::logic_error&) {
      r.fail("experiment", "seeds", "bad seed or range '" + item + "'");
    }
  }
  return seeds;
}

}  // namespace detail

/// Parses an INI config. Unknown sections or keys and out-of-range values
/// raise ConfigError naming the file, line and field.
inline ExperimentConfig load_config(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    const std::string where = e.filename() + (e.line() ? ":" + std::to_string(e.line()) : "");
    throw ConfigError(where + ": " + e.message());
  }
  const detail::Reader r(tree, path, detail::key_lines(path));
  const auto& known = detail::known_keys();
  for (const auto& [name, sec] : tree) {
    auto it = known.find(name);
    if (it == known.end()) {
      if (sec.empty()) r.fail(name, "", "key outside any section");
      r.fail(name, "", "unknown section");
    }
    for (const auto& kv : sec) {
      if (!it->second.count(kv.first)) r.fail(name, kv.first, "unknown key");
    }
  }

  ExperimentConfig c;
  if (r.has("experiment", "kind")) {
    const std::string k = r.text("experiment", "kind");
    if (k == "single") {
      c.kind = ScenarioKind::kSingle;
    } else if (k == "two_object") {
      c.kind = ScenarioKind::kTwoObject;
    } else {
      r.fail("experiment", "kind", "expected single or two_object, got '" + k + "'");
    }
  }
  if (r.has("experiment", "seeds")) c.seeds = detail::parse_seeds(r);
  r.read("experiment", "duration", c.duration, 1e-3, 3600.0);
  r.read("experiment", "sim_rate", c.sim_rate, 1.0, 1e5);
  r.read("schedule", "frame_rate", c.frame_rate, 1.0, 1e4);
  r.read("schedule", "predict_rate", c.predict_rate, 1.0, 1e5);

  double sigma_r_deg = c.corruption.sigma_R * 180.0 / M_PI;
  r.read("corruption", "sigma_p", c.corruption.sigma_p, 0.0);
  r.read("corruption", "sigma_R_deg", sigma_r_deg, 0.0, 180.0);
  c.corruption.sigma_R = sigma_r_deg * M_PI / 180.0;
  r.read("corruption", "outlier_rate", c.corruption.outlier_rate, 0.0, 1.0);
  r.read("corruption", "miss_rate", c.corruption.miss_rate, 0.0, 1.0);
  r.read("corruption", "protected_frames", c.corruption.protected_frames, 0, 1000000);

  r.read("dynamics", "restitution", c.dynamics.contact.restitution, 0.0, 1.0);
  r.read("dynamics", "baumgarte", c.dynamics.contact.baumgarte, 0.0, 1.0);
  r.read("dynamics", "margin", c.dynamics.margin, 0.0, 1.0);
  r.read("dynamics", "max_depth", c.dynamics.max_depth, 0.0, 10.0);

  if (r.has("filter", "dataset")) {
    const std::string d = r.text("filter", "dataset");
    if (d == "synthetic") {
      c.dataset = Dataset::kSynthetic;
    } else if (d == "real") {
      c.dataset = Dataset::kReal;
    } else {
      r.fail("filter", "dataset", "expected synthetic or real, got '" + d + "'");
    }
  }
  if (r.has("filter", "mode")) {
    try {
      c.mode = parse_mode(r.text("filter", "mode"));
    } catch (const ConfigError& e) {
      r.fail("filter", "mode", e.what());
    }
  }
  r.read("filter", "theta0", c.theta0, 0.0, 10.0);
  r.read("filter", "theta_floor", c.jacobian.theta_floor, 0.0, 10.0);
  r.read("filter", "jacobian_step", c.jacobian.step, 1e-12, 1e-1);
  c.noise_estimate = detail::read_noise(r, "noise.ekfphys", preset_noise(c.dataset, FilterMode::kEstimateFriction));
  c.noise_known = detail::read_noise(r, "noise.ekfphys-f", preset_noise(c.dataset, FilterMode::kKnownFriction));

  const double steps = c.sim_rate / c.frame_rate;
  if (std::abs(steps - std::round(steps)) > 1e-9) r.fail("schedule", "frame_rate", "must divide sim_rate evenly");
  const double predicts = c.predict_rate / c.frame_rate;
  if (std::abs(predicts - std::round(predicts)) > 1e-9) {
    r.fail("schedule", "predict_rate", "must be a whole multiple of frame_rate");
  }
  const double frames = c.duration * c.frame_rate;
  if (std::abs(frames - std::round(frames)) > 1e-9 || frames < 3) {
    r.fail("experiment", "duration", "must cover a whole number of at least 3 frames");
  }

  if (r.has("eval", "cut_points")) {
    c.cut_points.clear();
    for (const std::string& s : r.list("eval", "cut_points")) {
      try {
        std::size_t used = 0;
        const int k = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        c.cut_points.push_back(k);
      } catch (const std::logic_error&) {
        r.fail("eval", "cut_points", "bad frame index '" + s + "'");
      }
    }
  }
  for (int k : c.cut_points) {
    if (k < 0 || k >= c.num_frames()) r.fail("eval", "cut_points", "cut point " + std::to_string(k) + " outside the sequence");
  }
  auto thresholds = [&](const char* key, std::vector<double>& out) {
    if (!r.has("eval", key)) return;
    out.clear();
    for (const std::string& s : r.list("eval", key)) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::logic_error&) {
        r.fail("eval", key, "bad threshold '" + s + "'");
      }
    }
    if (!std::is_sorted(out.begin(), out.end())) r.fail("eval", key, "thresholds must be ascending");
  };
  thresholds("recall_thresholds", c.recall_thresholds);
  thresholds("recall_thresholds_deg", c.recall_thresholds_deg);
  if (r.has("sweep", "multipliers")) {
    c.sweep_multipliers = r.list("sweep", "multipliers");
    for (const std::string& m : c.sweep_multipliers) {
      if (m == "mean") continue;
      try {
        std::size_t used = 0;
        if (std::stod(m, &used) < 0.0 || used != m.size()) throw std::invalid_argument(m);
      } catch (const std::logic_error&) {
        r.fail("sweep", "multipliers", "bad multiplier '" + m + "'");
      }
    }
  }
  r.read("sweep", "mean_friction", c.mean_friction, 0.0, 10.0);
  return c;
}

/// Fully resolved configuration as INI text; loading it back gives the same config.
inline std::string resolved_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto join = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      if constexpr (std::is_same_v<std::decay_t<decltype(v[i])>, double>) {
        s += format_double(v[i]);
      } else if constexpr (std::is_same_v<std::decay_t<decltype(v[i])>, std::string>) {
        s += v[i];
      } else {
        s += std::to_string(v[i]);
      }
    }
    return s;
  };
  auto noise = [&](const char* name, const NoiseConfig& n) {
    os << "[" << name << "]\n"
       << "s_state=" << format_double(n.s_state) << "\ns_theta=" << format_double(n.s_theta)
       << "\nq_p=" << format_double(n.q_p) << "\nq_R=" << format_double(n.q_R)
       << "\nsigma0_p=" << format_double(n.sigma0_p) << "\nsigma0_R=" << format_double(n.sigma0_R)
       << "\nsigma0_v=" << format_double(n.sigma0_v) << "\nsigma0_w=" << format_double(n.sigma0_w)
       << "\nsigma0_theta=" << format_double(n.sigma0_theta) << "\nzeta=" << format_double(n.zeta) << "\n";
  };
  os << "[experiment]\nkind=" << (c.kind == ScenarioKind::kSingle ? "single" : "two_object")
     << "\nseeds=" << join(c.seeds) << "\nduration=" << format_double(c.duration)
     << "\nsim_rate=" << format_double(c.sim_rate) << "\n";
  os << "[schedule]\nframe_rate=" << format_double(c.frame_rate)
     << "\npredict_rate=" << format_double(c.predict_rate) << "\n";
  os << "[corruption]\nsigma_p=" << format_double(c.corruption.sigma_p)
     << "\nsigma_R_deg=" << format_double(c.corruption.sigma_R * 180.0 / M_PI)
     << "\noutlier_rate=" << format_double(c.corruption.outlier_rate)
     << "\nmiss_rate=" << format_double(c.corruption.miss_rate)
     << "\nprotected_frames=" << c.corruption.protected_frames << "\n";
  os << "[dynamics]\nrestitution=" << format_double(c.dynamics.contact.restitution)
     << "\nbaumgarte=" << format_double(c.dynamics.contact.baumgarte)
     << "\nmargin=" << format_double(c.dynamics.margin) << "\nmax_depth=" << format_double(c.dynamics.max_depth)
     << "\n";
  os << "[filter]\nmode=" << mode_name(c.mode) << "\ndataset=" << (c.dataset == Dataset::kSynthetic ? "synthetic" : "real")
     << "\ntheta0=" << format_double(c.theta0) << "\ntheta_floor=" << format_double(c.jacobian.theta_floor)
     << "\njacobian_step=" << format_double(c.jacobian.step) << "\n";
  noise("noise.ekfphys", c.noise_estimate);
  noise("noise.ekfphys-f", c.noise_known);
  os << "[eval]\ncut_points=" << join(c.cut_points) << "\nrecall_thresholds=" << join(c.recall_thresholds)
     << "\nrecall_thresholds_deg=" << join(c.recall_thresholds_deg) << "\n";
  os << "[sweep]\nmultipliers=" << join(c.sweep_multipliers) << "\nmean_friction=" << format_double(c.mean_friction)
     << "\n";
  return os.str();
}

}  // namespace physekf::harness
