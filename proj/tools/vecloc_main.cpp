/*
 * Copyright 2026 The vecloc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// vecloc command line: gen-map, render, solve, train, eval, gradcheck.
//
// Every subcommand takes --config, --seed and --out. On failure a single
// JSON error record goes to stderr and to <out>/error.json.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>

#include "CLI11.hpp"
#include <fmt/format.h>
#include "json.hpp"

#include "vecloc/autodiff.hpp"
#include "vecloc/bev_grid.hpp"
#include "vecloc/errors.hpp"
#include "vecloc/harness.hpp"
#include "vecloc/map_core.hpp"
#include "vecloc/matcher.hpp"
#include "vecloc/pose_solver.hpp"
#include "vecloc/synth.hpp"
#include "vecloc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vecloc {
namespace {

enum ExitCode {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kBadInput = 3,
  kIo = 4,
  kNumerical = 5,
  kCheckFailed = 6,
};

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  fs::path config;
  std::uint64_t seed = 0;
  fs::path out;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = load_experiment_config(o.config);
  c.seed = o.seed;
  return c;
}

void make_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << doc.dump(2) << "\n";
}

VectorMap as_map(const std::vector<MapElement>& elements) {
  VectorMap m;
  m.elements = elements;
  if (!elements.empty()) {
    m.bounds = element_bounds(elements.front());
    for (const MapElement& e : elements) {
      const Box2 b = element_bounds(e);
      m.bounds.min = m.bounds.min.cwiseMin(b.min);
      m.bounds.max = m.bounds.max.cwiseMax(b.max);
    }
  }
  return m;
}

void cmd_gen_map(const Options& o) {
  const ExperimentConfig c = load(o);
  make_out(o.out);
  json scenes = json::array();
  for (int s = 0; s < c.scenes; ++s) {
    SceneSpec spec = c.scene;
    spec.seed += static_cast<std::uint64_t>(s);
    const Scene scene = generate_scene(spec);
    const std::string stem = fmt::format("scene_{}", s);
    save_map(scene.map, o.out / (stem + ".vmap"));
    std::vector<PoseRecord> poses;
    for (std::size_t k = 0; k < scene.trajectory.size(); ++k) {
      poses.push_back({static_cast<std::int64_t>(k), "trajectory", scene.trajectory[k]});
    }
    save_poses(poses, o.out / (stem + ".poses"));
    scenes.push_back({{"map", stem + ".vmap"},
                      {"poses", stem + ".poses"},
                      {"seed", spec.seed},
                      {"elements", scene.map.elements.size()},
                      {"bytes_per_km", map_size_report(scene.map, spec.road_length / 1000.0)}});
  }
  write_json(o.out / "scenes.json", {{"scenes", scenes}});
}

void cmd_render(const Options& o) {
  const ExperimentConfig c = load(o);
  make_out(o.out);
  const SignatureSet signatures = oracle_signatures(build_matcher(c.matcher));
  for (int i = 0; i < c.trials; ++i) {
    const Frame f = experiment_frame(c, signatures, static_cast<std::uint64_t>(i));
    const fs::path dir = o.out / fmt::format("frame_{}", i);
    make_out(dir);
    for (int l = 0; l < kPyramidLevels; ++l) {
      write_grid_dump(f.pyramid.layers[static_cast<std::size_t>(l)], dir / fmt::format("layer{}.grid", l));
    }
    const std::vector<PoseRecord> poses = {{0, "gt", f.gt_pose}, {0, "init", f.init_pose}};
    save_poses(poses, dir / "poses.poses");
    save_map(as_map(f.elements), dir / "elements.vmap");
  }
}

void cmd_solve(const Options& o) {
  const ExperimentConfig c = load(o);
  make_out(o.out);
  const Model<double> model = build_matcher(c.matcher);
  const SignatureSet signatures = oracle_signatures(model);
  std::vector<PoseRecord> poses;
  for (int i = 0; i < c.trials; ++i) {
    const Frame f = experiment_frame(c, signatures, static_cast<std::uint64_t>(i));
    const auto emb = decode(model, f.elements, f.init_pose, f.pyramid.layers[0]);
    const SolverResult r = solve_multilevel(f.pyramid, f.elements, emb, f.init_pose, c.solver, model);
    write_solver_dump(r, o.out / fmt::format("frame_{}.solver.json", i));
    poses.push_back({i, "gt", f.gt_pose});
    poses.push_back({i, "init", f.init_pose});
    poses.push_back({i, "estimate", r.final_pose});
  }
  save_poses(poses, o.out / "poses.poses");
}

void cmd_train(const Options& o) {
  ExperimentConfig c = load(o);
  make_out(o.out);
  const Model<double> model = build_matcher(c.matcher);
  const std::vector<Frame> frames = training_frames(c, oracle_signatures(model));
  TrainingConfig tc = c.training.config;
  tc.loss.solver = c.solver;
  std::ofstream log(o.out / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write train_log.jsonl");
  const TrainingResult r = train_loop(model, frames, tc, &log);
  save_checkpoint(r.model, o.out / "checkpoint.json");
}

void cmd_eval(const Options& o) {
  const ExperimentConfig c = load(o);
  const ExperimentResult r = run_experiment(c);
  emit_report(r, o.out);
  write_json(o.out / "config.json", to_json(c));
}

json gradcheck_json(const GradCheckReport& report) {
  json entries = json::array();
  for (const GradCheckEntry& e : report.entries) {
    entries.push_back({{"tensor", e.tensor},
                       {"index", e.index},
                       {"analytic", e.analytic},
                       {"numeric", e.numeric},
                       {"rel_error", e.rel_error}});
  }
  return {{"checked", report.checked}, {"max_rel_error", report.max_rel_error}, {"entries", entries}};
}

// One check per loss term alone, then the configured weighted total.
void cmd_gradcheck(const Options& o) {
  const ExperimentConfig c = load(o);
  make_out(o.out);
  const GradCheckSetup setup = make_gradcheck_setup(c.seed);
  const std::pair<const char*, LossWeights> terms[] = {
      {"rmse", {1.0, 0.0, 0.0, 0.0}},
      {"pose_solver_kl", {0.0, 1.0, 0.0, 0.0}},
      {"random_pose_kl", {0.0, 0.0, 1.0, 0.0}},
      {"focal", {0.0, 0.0, 0.0, 1.0}},
      {"total", c.training.config.loss.weights},
  };
  constexpr double kTolerance = 1e-4;
  json doc = {{"tolerance", kTolerance}, {"terms", json::object()}};
  double worst = 0.0;
  for (const auto& [name, weights] : terms) {
    LossConfig loss = setup.loss;
    loss.weights = weights;
    const GradCheckReport report = gradcheck(setup.model, setup.frame, loss);
    doc["terms"][name] = gradcheck_json(report);
    worst = std::max(worst, report.max_rel_error);
    if (std::isnan(report.max_rel_error)) worst = report.max_rel_error;
  }
  doc["max_rel_error"] = worst;
  write_json(o.out / "gradcheck.json", doc);
  if (!(worst < kTolerance)) {
    throw CheckFailed(fmt::format("max relative gradient error {:.3e} exceeds {:.0e}", worst, kTolerance));
  }
}

void report_error(const Options& o, const char* type, const std::string& message) {
  const json record = {{"error", {{"command", o.command}, {"type", type}, {"message", message}}}};
  std::cerr << record.dump() << std::endl;
  if (o.out.empty()) return;
  std::error_code ec;
  fs::create_directories(o.out, ec);
  std::ofstream out(o.out / "error.json", std::ios::trunc);
  if (out) out << record.dump(2) << "\n";
}

int run(const Options& o) {
  std::error_code stale;
  fs::remove(o.out / "error.json", stale);
  try {
    if (o.command == "gen-map") cmd_gen_map(o);
    else if (o.command == "render") cmd_render(o);
    else if (o.command == "solve") cmd_solve(o);
    else if (o.command == "train") cmd_train(o);
    else if (o.command == "eval") cmd_eval(o);
    else if (o.command == "gradcheck") cmd_gradcheck(o);
    return kOk;
  } catch (const ParseError& e) {
    report_error(o, "parse_error", e.what());
    return kBadInput;
  } catch (const ValidationError& e) {
    report_error(o, "validation_error", e.what());
    return kBadInput;
  } catch (const IoError& e) {
    report_error(o, "io_error", e.what());
    return kIo;
  } catch (const DivergenceError& e) {
    report_error(o, "divergence_error", e.what());
    return kNumerical;
  } catch (const SamplingError& e) {
    report_error(o, "sampling_error", e.what());
    return kNumerical;
  } catch (const DegeneratePlaneError& e) {
    report_error(o, "degenerate_plane", e.what());
    return kNumerical;
  } catch (const CheckFailed& e) {
    report_error(o, "check_failed", e.what());
    return kCheckFailed;
  } catch (const ArgumentError& e) {
    report_error(o, "argument_error", e.what());
    return kBadInput;
  } catch (const std::exception& e) {
    report_error(o, "internal_error", e.what());
    return kInternal;
  }
}

}  // namespace
}  // namespace vecloc

int main(int argc, char** argv) {
  using vecloc::Options;
  CLI::App app{"Vector-map localization: scene generation, rendering, solving, training"};
  app.require_subcommand(1, 1);
  Options opts;
  const char* commands[][2] = {
      {"gen-map", "Generate synthetic scenes: map files and trajectory pose records"},
      {"render", "Render oracle BEV pyramids for `trials` frames as grid dumps"},
      {"solve", "Run the multi-level solver on `trials` frames and write debug dumps"},
      {"train", "Train the matcher and write a checkpoint and a training log"},
      {"eval", "Run an experiment and write the per-frame CSV and summary"},
      {"gradcheck", "Compare analytic and finite-difference gradients at toy scale"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c[0], c[1]);
    sub->add_option("--config", opts.config, "Experiment config (JSON)")->required();
    sub->add_option("--seed", opts.seed, "Experiment seed")->required();
    sub->add_option("--out", opts.out, "Output directory")->required();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    for (CLI::App* sub : app.get_subcommands()) opts.command = sub->get_name();
    const json record = {{"error", {{"command", opts.command}, {"type", "usage_error"}, {"message", e.what()}}}};
    std::cerr << record.dump() << std::endl;
    return vecloc::kUsage;
  }
  opts.command = app.get_subcommands().front()->get_name();
  return vecloc::run(opts);
}
