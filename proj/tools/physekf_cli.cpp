// physekf: simulate scenes, corrupt them into observations, filter, predict
// and evaluate. Exit status 0 on success, 1 on configuration or input errors,
// 2 on numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "physekf/harness/config.hpp"
#include "physekf/harness/pipeline.hpp"
#include "physekf/harness/report.hpp"

namespace fs = std::filesystem;
using namespace physekf;
using namespace physekf::harness;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out;
  std::string in;
  int workers = 0;
  int from = 0;
  std::string beliefs;
  std::string gt;
  std::string group_by;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.mode.empty()) cfg.mode = parse_mode(o.mode);
  if (o.seed) cfg.seeds = {*o.seed};
  return cfg;
}

fs::path input_dir(const Options& o) { return o.in.empty() ? fs::path(o.out) : fs::path(o.in); }

std::ofstream create(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

int simulate(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  const SimulatedScene scene = generate_scene(cfg.seeds.at(0), cfg);
  fs::create_directories(o.out);
  write_scenario((fs::path(o.out) / "scenario.ini").string(), scene.scenario);
  auto os = create(fs::path(o.out) / "ground_truth.jsonl");
  write_ground_truth(os, scene.truth);
  return 0;
}

int corrupt_cmd(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  const fs::path in = input_dir(o);
  const Scenario sc = read_scenario((in / "scenario.ini").string());
  const auto objects = split_by_id(read_jsonl((in / "ground_truth.jsonl").string()));
  const std::uint64_t seed = o.seed.value_or(sc.seed);
  const int stride = sc.steps_per_frame();
  std::vector<ObservationLog> logs;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    std::vector<TrajectorySample> frames;
    for (std::size_t k = 0; k < objects[i].size() && static_cast<int>(frames.size()) < sc.num_frames(); k += stride) {
      frames.push_back({objects[i][k].t, objects[i][k].pose, objects[i][k].twist});
    }
    logs.push_back(corrupt(frames, sc.frame_rate, cfg.corruption, corruption_seed(seed, static_cast<int>(i))));
  }
  auto os = create(fs::path(o.out) / "observations.jsonl");
  write_observations(os, logs);
  auto flags = create(fs::path(o.out) / "corruption.csv");
  flags << "object,frame,outlier,missing\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    for (std::size_t k = 0; k < logs[i].frames.size(); ++k) {
      flags << i << "," << k << "," << int(logs[i].outlier[k]) << "," << int(logs[i].missing[k]) << "\n";
    }
  }
  return 0;
}

int filter_cmd(const Options& o, bool prediction) {
  const ExperimentConfig cfg = resolve(o);
  const fs::path in = input_dir(o);
  const Scenario sc = read_scenario((in / "scenario.ini").string());
  const auto logs = read_observations((in / "observations.jsonl").string(), sc.frame_rate);
  if (prediction && (o.from < 1 || o.from >= static_cast<int>(logs.at(0).frames.size()))) {
    throw ConfigError("--from must lie in [1, " + std::to_string(logs.at(0).frames.size() - 1) + "]");
  }
  const auto beliefs = filter_scene(sc, logs, cfg, cfg.mode, prediction ? std::optional<int>(o.from) : std::nullopt);
  const std::string name = prediction ? std::string("predict_") + mode_name(cfg.mode) + "_from" + std::to_string(o.from)
                                      : std::string("beliefs_") + mode_name(cfg.mode);
  auto os = create(fs::path(o.out) / (name + ".jsonl"));
  write_beliefs(os, beliefs);
  return 0;
}

int eval_cmd(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  const fs::path in = input_dir(o);
  const std::string beliefs =
      o.beliefs.empty() ? (in / (std::string("beliefs_") + mode_name(cfg.mode) + ".jsonl")).string() : o.beliefs;
  const std::string gt = o.gt.empty() ? (in / "ground_truth.jsonl").string() : o.gt;
  const auto est = read_jsonl(beliefs);
  const auto truth = read_jsonl(gt);
  auto os = create(fs::path(o.out) / "eval.csv");
  write_eval(os, cfg, est, truth);
  return 0;
}

int sweep_cmd(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  write_sweep(o.out, cfg, friction_sweep(cfg, cfg.sweep_multipliers, resolve_workers(o.workers)));
  return 0;
}

int report_cmd(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  if (!o.group_by.empty() && o.group_by != "object") throw ConfigError("--group-by accepts only 'object'");
  write_report(o.out, cfg, run_experiment(cfg, resolve_workers(o.workers)), o.group_by == "object");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-based pose and friction filtering on synthetic sliding scenes"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "scene seed (overrides the config seed list)");
    sub->add_option("--mode", o.mode, "ekfphys or ekfphys-f")->check(CLI::IsMember({"ekfphys", "ekfphys-f"}));
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--in", o.in, "input directory (default: --out)");
    sub->add_option("--workers", o.workers, "worker threads (default: PHYSEKF_WORKERS or 1)");
  };

  auto* sim = app.add_subcommand("simulate", "simulate a scene and write its ground truth");
  auto* cor = app.add_subcommand("corrupt", "turn ground truth into noisy pose observations");
  auto* fil = app.add_subcommand("filter", "filter the observations of a scene");
  auto* pre = app.add_subcommand("predict", "filter up to a frame, then predict");
  auto* ev = app.add_subcommand("eval", "errors of an estimate file against ground truth");
  auto* sw = app.add_subcommand("sweep", "friction initialization sweep over the seed list");
  auto* rep = app.add_subcommand("report", "full experiment over the seed list");
  for (auto* s : {sim, cor, fil, pre, ev, sw, rep}) common(s);
  pre->add_option("--from", o.from, "last observed frame")->required();
  ev->add_option("--beliefs", o.beliefs, "estimate JSON Lines (default: <in>/beliefs_<mode>.jsonl)");
  ev->add_option("--gt", o.gt, "ground-truth JSON Lines (default: <in>/ground_truth.jsonl)");
  rep->add_option("--group-by", o.group_by, "summary grouping: object");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) return simulate(o);
    if (*cor) return corrupt_cmd(o);
    if (*fil) return filter_cmd(o, false);
    if (*pre) return filter_cmd(o, true);
    if (*ev) return eval_cmd(o);
    if (*sw) return sweep_cmd(o);
    if (*rep) return report_cmd(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 1;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const InitializationFailure& e) {
    std::cerr << "initialization failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
