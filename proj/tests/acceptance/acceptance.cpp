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

// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset. Exit status is the number of
// failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <fmt/core.h>

#include "json.hpp"
#include "support/oracles.hpp"
#include "vecloc/harness.hpp"
#include "vecloc/pose_solver.hpp"
#include "vecloc/training.hpp"

namespace vecloc {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using oracle::uniform;
using Clock = std::chrono::steady_clock;

// Tolerances.
constexpr double kC1MaeM = 0.05, kC1MaeDeg = 0.05, kC1MaxSeconds = 120.0;
constexpr double kC2MaeLon = 0.15, kC2MaeLat = 0.10, kC2MaeDeg = 0.15, kC2MinPct = 95.0;
constexpr double kC3MinFraction = 0.90;
constexpr double kC4ProbSum = 1e-9, kC4Shift = 1e-12, kC4MinEig = -1e-10;
constexpr double kC5Tol = 1e-10;
constexpr double kC6RelErr = 1e-4, kC6Step = 1e-4, kC6MaxSeconds = 180.0;
constexpr double kC7MinReduction = 0.5;
constexpr double kC8Tol = 1e-9;
constexpr double kC10Tol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double Seconds(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path OutDir() { return fs::path(VECLOC_ACCEPT_OUT); }

ExperimentConfig Config(const char* name) {
  return load_experiment_config(fs::path(VECLOC_CONFIG_DIR) / name);
}

// Criterion-1 run, shared with criteria 3 and 10.
struct OracleRun {
  ExperimentConfig config;
  ExperimentResult result;
  double seconds = 0.0;
};

const OracleRun& Oracle() {
  static const OracleRun run = [] {
    OracleRun r;
    r.config = Config("oracle.json");
    const auto t0 = Clock::now();
    r.result = run_experiment(r.config);
    r.seconds = Seconds(t0);
    emit_report(r.result, OutDir() / "oracle");
    return r;
  }();
  return run;
}

Outcome Criterion1() {
  const OracleRun& run = Oracle();
  const MetricsReport& m = run.result.report;
  int min_elements = 1 << 30;
  for (const FrameResult& f : run.result.frames) min_elements = std::min(min_elements, f.elements);
  const bool pass = m.trials == 200 && m.succeeded == 200 && min_elements >= 20 &&
                    run.config.frame.noise_rel == 0.0 && m.lon.mae <= kC1MaeM &&
                    m.lat.mae <= kC1MaeM && m.yaw.mae <= kC1MaeDeg && m.lon.pct_below[2] == 100.0 &&
                    m.lat.pct_below[2] == 100.0 && m.yaw.pct_below[2] == 100.0 &&
                    run.seconds <= kC1MaxSeconds;
  return {pass, fmt::format("frames={}/{} min_visible={} MAE lon={:.4f} lat={:.4f} m yaw={:.4f} deg "
                            "(<= {}, {}, {}); below 0.3/0.3/0.6: {:.1f}/{:.1f}/{:.1f}%; {:.1f} s (<= {})",
                            m.succeeded, m.trials, min_elements, m.lon.mae, m.lat.mae, m.yaw.mae,
                            kC1MaeM, kC1MaeM, kC1MaeDeg, m.lon.pct_below[2], m.lat.pct_below[2],
                            m.yaw.pct_below[2], run.seconds, kC1MaxSeconds)};
}

const ExperimentResult& Noisy() {
  static const ExperimentResult r = [] {
    ExperimentResult out = run_experiment(Config("noise.json"));
    emit_report(out, OutDir() / "noise");
    return out;
  }();
  return r;
}

Outcome Criterion2() {
  const ExperimentConfig c = Config("noise.json");
  const MetricsReport& m = Noisy().report;
  const double pole = c.frame.dropout[static_cast<std::size_t>(index_of(SemanticType::kPole))];
  const double bound = c.frame.dropout[static_cast<std::size_t>(index_of(SemanticType::kRoadBoundary))];
  const bool setup = c.frame.noise_rel == 0.3 && pole == 0.05 && bound == 0.5 && c.trials == 200;
  const bool pass = setup && m.succeeded == m.trials && m.lon.mae <= kC2MaeLon &&
                    m.lat.mae <= kC2MaeLat && m.yaw.mae <= kC2MaeDeg &&
                    m.lon.pct_below[2] >= kC2MinPct && m.lat.pct_below[2] >= kC2MinPct;
  return {pass, fmt::format("noise 0.3, dropout pole {} boundary {}; MAE lon={:.4f} lat={:.4f} m "
                            "yaw={:.4f} deg (<= {}, {}, {}); below 0.3 m: {:.1f}/{:.1f}% (>= {}); AR {:.1f}%",
                            pole, bound, m.lon.mae, m.lat.mae, m.yaw.mae, kC2MaeLon, kC2MaeLat,
                            kC2MaeDeg, m.lon.pct_below[2], m.lat.pct_below[2], kC2MinPct,
                            m.available_ratio)};
}

// |error| combines translation and yaw through the BEV half extent, since a
// 3-DoF offset has no unitless norm.
Outcome Criterion3() {
  const OracleRun& run = Oracle();
  const double half = 0.5 * run.config.frame.pyramid.base.extent_h();
  int monotone = 0, total = 0;
  std::array<int, 3> breaks{};
  for (const FrameResult& f : run.result.frames) {
    if (!f.ok) continue;
    ++total;
    std::vector<double> e;
    for (const AxisErrors& a : f.path_errors) {
      e.push_back(std::hypot(std::hypot(a.lon, a.lat), half * deg_to_rad(a.yaw_deg)));
    }
    bool ok = true;
    for (std::size_t k = 1; k < e.size(); ++k) {
      if (e[k] > e[k - 1]) {
        ok = false;
        ++breaks[k - 1];
      }
    }
    monotone += ok;
  }
  const double frac = total > 0 ? static_cast<double>(monotone) / total : 0.0;
  return {frac >= kC3MinFraction,
          fmt::format("non-increasing in {}/{} frames = {:.1f}% (>= {:.0f}%); increases at "
                      "init->L0 {}, L0->L1 {}, L1->L2 {}",
                      monotone, total, 100 * frac, 100 * kC3MinFraction, breaks[0], breaks[1], breaks[2])};
}

Outcome Criterion4() {
  std::mt19937_64 rng(4004);
  int bad_sum = 0, bad_shift = 0, bad_cov = 0, bad_delta = 0;
  double worst_sum = 0, worst_shift = 0, worst_eig = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 200);
    std::vector<PoseOffset3> offs(static_cast<std::size_t>(n));
    std::vector<double> s(static_cast<std::size_t>(n));
    const double spread = std::pow(10.0, uniform(rng, -2, 3));
    for (int k = 0; k < n; ++k) {
      offs[static_cast<std::size_t>(k)] = {uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -0.05, 0.05)};
      s[static_cast<std::size_t>(k)] = uniform(rng, -spread, spread);
    }
    const Posterior p = posterior(offs, s);
    double sum = 0.0;
    for (double q : p.probs) {
      sum += q;
      if (q < 0) ++bad_sum;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    bad_sum += std::abs(sum - 1.0) > kC4ProbSum;

    const double c = uniform(rng, -1e3, 1e3);
    auto t = s;
    for (double& v : t) v += c;
    const Posterior ps = posterior(offs, t);
    double shift = 0.0;
    for (int k = 0; k < n; ++k) shift = std::max(shift, std::abs(ps.probs[static_cast<std::size_t>(k)] - p.probs[static_cast<std::size_t>(k)]));
    worst_shift = std::max(worst_shift, shift);
    bad_shift += shift > kC4Shift;

    const Eigen::Matrix3d S = offset_covariance(p, expected_offset(p));
    const double eig = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(S).eigenvalues().minCoeff();
    worst_eig = std::min(worst_eig, eig);
    bad_cov += !(S == S.transpose()) || eig < kC4MinEig;

    Posterior d{offs, std::vector<double>(static_cast<std::size_t>(n), 0.0)};
    d.probs[static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n))] = 1.0;
    bad_delta += !(offset_covariance(d, expected_offset(d)) == Eigen::Matrix3d::Zero());
  }
  const bool pass = bad_sum + bad_shift + bad_cov + bad_delta == 0;
  return {pass, fmt::format("1000 cases each; violations sum={} shift={} cov={} delta={}; worst |sum-1|={:.2e} "
                            "(<= {:.0e}), shift={:.2e} (<= {:.0e}), min eig={:.2e} (>= {:.0e})",
                            bad_sum, bad_shift, bad_cov, bad_delta, worst_sum, kC4ProbSum, worst_shift,
                            kC4Shift, worst_eig, kC4MinEig)};
}

Outcome Criterion5() {
  std::mt19937_64 rng(5005);
  const int n = 120;
  double worst_score = 0, worst_cov = 0, worst_bilinear = 0;
  int raster_mismatch = 0;

  MatcherDims dims;
  dims.channels = 6;
  dims.heads = 2;
  dims.points = 2;
  dims.layers = 1;
  dims.ffn_hidden = 8;
  dims.head_hidden = 5;
  dims.level_channels = {6, 4, 4};
  for (int trial = 0; trial < n; ++trial) {
    Model<double> m = init_model(dims, static_cast<std::uint64_t>(trial));
    std::normal_distribution<double> nd(0.0, 0.3);
    auto flat = flatten(m);
    for (double& v : flat) v += nd(rng);
    assign(m, flat);
    const GridSpec spec = GridSpec::centered(12 + trial % 5, 10 + trial % 7, 0.5);
    const BevGrid grid = oracle::random_grid(spec, 6, rng);
    const Pose6 base = oracle::pose({uniform(rng, -5, 5), uniform(rng, -5, 5), 1.8}, uniform(rng, -M_PI, M_PI),
                                    uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05));
    std::vector<MapElement> elements;
    std::vector<std::vector<double>> emb;
    for (int i = 0; i < 1 + trial % 4; ++i) {
      const Eigen::Vector2d c = base.t.head<2>() + Eigen::Vector2d(uniform(rng, -2.5, 2.5), uniform(rng, -2.5, 2.5));
      if (i % 2 == 0) {
        elements.push_back(MapElement::segment(i, SemanticType::kLaneLine, c,
                                               c + Eigen::Vector2d(uniform(rng, -2, 2), uniform(rng, -2, 2))));
      } else {
        elements.push_back(MapElement::vertical(i, SemanticType::kPole, c, 4.0));
      }
      std::vector<double> e(6);
      for (double& v : e) v = uniform(rng, -1, 1);
      emb.push_back(e);
    }
    const auto cands = sample_candidate_offsets({0.5, 0.5, deg_to_rad(1)}, {0.5, 0.5, deg_to_rad(1)});
    const auto got = score_candidates(grid, elements, emb, cands, base, m.params.heads[0], SegmentSampling::fixed(4));
    const auto want = oracle::scores(grid, elements, emb, m.params.heads[0], cands, base, 4);
    for (std::size_t k = 0; k < got.size(); ++k) worst_score = std::max(worst_score, std::abs(got[k] - want[k]));

    std::vector<PoseOffset3> offs(30);
    std::vector<double> s(30);
    for (std::size_t k = 0; k < 30; ++k) {
      offs[k] = {uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -0.05, 0.05)};
      s[k] = uniform(rng, -5, 5);
    }
    const Posterior p = posterior(offs, s);
    worst_cov = std::max(worst_cov, (offset_covariance(p, expected_offset(p)) - oracle::covariance(offs, p.probs))
                                        .cwiseAbs().maxCoeff());

    for (int k = 0; k < 20; ++k) {
      const double u = uniform(rng, -1, spec.H), v = uniform(rng, -1, spec.W);
      const auto a = bilinear_sample(grid, Eigen::Vector2d(u, v));
      const auto b = oracle::bilinear(grid, u, v);
      for (std::size_t c = 0; c < a.size(); ++c) worst_bilinear = std::max(worst_bilinear, std::abs(a[c] - b[c]));
    }

    std::vector<MapElement> segs;
    std::vector<Eigen::Vector2d> pts;
    for (int k = 0; k < 5; ++k) {
      MapElement e = oracle::random_segment(k + 1, rng, 5.0);
      for (int j : {0, 2}) e.geom[static_cast<std::size_t>(j)] += base.t.x();
      for (int j : {1, 3}) e.geom[static_cast<std::size_t>(j)] += base.t.y();
      segs.push_back(e);
      const int cnt = raster_sampling(spec).count_for((e.end() - e.anchor()).norm());
      for (const auto& q : oracle::points_of(e, cnt)) pts.push_back(q);
    }
    raster_mismatch += rasterize_semantic_gt(segs, base, spec).cells != oracle::raster(pts, base, spec);
  }
  const bool pass = worst_score <= kC5Tol && worst_cov <= kC5Tol && worst_bilinear <= kC5Tol && raster_mismatch == 0;
  return {pass, fmt::format("{} instances each; max |diff| score={:.2e} covariance={:.2e} bilinear={:.2e} "
                            "(<= {:.0e}); raster mismatches={}",
                            n, worst_score, worst_cov, worst_bilinear, kC5Tol, raster_mismatch)};
}

Outcome Criterion6() {
  const auto t0 = Clock::now();
  const GradCheckSetup setup = make_gradcheck_setup(6);
  const std::size_t params = parameter_count(setup.model);
  const std::vector<std::pair<std::string, LossWeights>> terms{
      {"rmse", {1, 0, 0, 0}},         {"pose_solver_kl", {0, 1, 0, 0}}, {"random_pose_kl", {0, 0, 1, 0}},
      {"focal", {0, 0, 0, 1}},        {"total", {1, 1, 1, 1}}};
  bool pass = setup.model.dims.channels == 8 && setup.frame.elements.size() == 4;
  std::string detail = fmt::format("C={} K={} params={};", setup.model.dims.channels, setup.frame.elements.size(), params);
  for (const auto& [name, w] : terms) {
    LossConfig c = setup.loss;
    c.weights = w;
    const GradCheckReport r = gradcheck(setup.model, setup.frame, c, kC6Step);
    pass = pass && r.max_rel_error < kC6RelErr && r.checked == params;
    detail += fmt::format(" {}={:.1e}", name, r.max_rel_error);
  }
  const double secs = Seconds(t0);
  pass = pass && secs <= kC6MaxSeconds;
  detail += fmt::format(" (< {:.0e}); {:.1f} s (<= {})", kC6RelErr, secs, kC6MaxSeconds);
  return {pass, detail};
}

Outcome Criterion7() {
  ExperimentConfig trained = Config("train.json");
  ExperimentConfig untrained = trained;
  untrained.training.enabled = false;
  const ExperimentResult before = run_experiment(untrained);
  const ExperimentResult after = run_experiment(trained);
  emit_report(before, OutDir() / "untrained");
  emit_report(after, OutDir() / "trained");
  if (after.training_log.empty()) return {false, "no training log"};
  const double first = after.training_log.front().loss.total;
  const double last = after.training_log.back().loss.total;
  const double reduction = 1.0 - last / first;
  const MetricsReport& a = before.report;
  const MetricsReport& b = after.report;
  const bool setup = trained.training.frames == 8 && trained.training.config.iterations == 200 && trained.trials == 50;
  const bool pass = setup && reduction >= kC7MinReduction && b.lon.mae < a.lon.mae && b.lat.mae < a.lat.mae &&
                    b.yaw.mae < a.yaw.mae;
  return {pass, fmt::format("{} iterations on {} scenes: loss {:.3f} -> {:.3f} ({:.0f}% reduction, >= {:.0f}%); "
                            "held-out {} frames MAE lon {:.3f} -> {:.3f} m, lat {:.3f} -> {:.3f} m, yaw {:.3f} -> {:.3f} deg",
                            after.training_log.size(), trained.training.frames, first, last, 100 * reduction,
                            100 * kC7MinReduction, b.trials, a.lon.mae, b.lon.mae, a.lat.mae, b.lat.mae,
                            a.yaw.mae, b.yaw.mae)};
}

Outcome Criterion8() {
  std::mt19937_64 rng(8008);
  int flat_bad = 0;
  double worst_height = 0, worst_grid = 0;
  const GridSpec spec = GridSpec::centered(64, 64, 0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    Pose6 flat = oracle::pose({uniform(rng, -100, 100), uniform(rng, -100, 100), uniform(rng, 0.5, 3)},
                              uniform(rng, -M_PI, M_PI), 0, 0);
    const double x = uniform(rng, -200, 200), y = uniform(rng, -200, 200);
    flat_bad += BevPlane::of(flat).height_at(x, y) != flat.t.z();

    const Pose6 tilted = oracle::random_pose(rng, deg_to_rad(10));
    const Eigen::Vector2d xy = tilted.t.head<2>() + Eigen::Vector2d(uniform(rng, -20, 20), uniform(rng, -20, 20));
    const Eigen::Vector3d want = oracle::vertical_line_plane(tilted, xy.x(), xy.y());
    worst_height = std::max(worst_height, std::abs(BevPlane::of(tilted).height_at(xy.x(), xy.y()) - want.z()));
    const Eigen::Vector2d g = project_endpoint_to_bev(tilted, xy, spec);
    const Eigen::Vector2d gw = oracle::to_grid(tilted, want, spec);
    worst_grid = std::max(worst_grid, (g - gw).norm() * spec.resolution);
  }
  const bool pass = flat_bad == 0 && worst_height <= kC8Tol && worst_grid <= kC8Tol;
  return {pass, fmt::format("1000 flat cases with z != sensor height: {}; tilted (<= 10 deg) max |dz|={:.2e} m, "
                            "max BEV offset={:.2e} m (<= {:.0e})",
                            flat_bad, worst_height, worst_grid, kC8Tol)};
}

Outcome Criterion9() {
  std::mt19937_64 rng(9009);
  int bad_ratio = 0, bad_cell = 0, bad_idem = 0, kept = 0, seen = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<MapElement> in;
    const int n = static_cast<int>(rng() % 300);
    const double half = uniform(rng, 1, 20);
    for (int i = 0; i < n; ++i) {
      Eigen::Vector3d normal(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
      if (normal.norm() < 1e-3) normal = Eigen::Vector3d::UnitZ();
      normal.normalize();
      const double r12 = uniform(rng, 0, 0.3);
      in.push_back(MapElement::surfel(i + 1, {uniform(rng, -half, half), uniform(rng, -half, half)}, normal,
                                      {r12, r12 * uniform(rng, 0.05, 1)}));
    }
    // A few exact duplicates and ties on cell borders.
    for (int i = 0; i < n / 10; ++i) {
      MapElement d = in[static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n))];
      d.id = 10000 + i;
      d.geom[0] = std::round(d.geom[0]);
      in.push_back(d);
    }
    seen += static_cast<int>(in.size());
    const auto out = filter_surfels(in);
    kept += static_cast<int>(out.size());
    std::map<std::pair<long, long>, int> per_cell;
    for (const MapElement& s : out) {
      bad_ratio += !(s.planarity() <= kSurfelPlanarityThreshold);
      ++per_cell[{static_cast<long>(std::floor(s.geom[0] / kSurfelCellSize)),
                  static_cast<long>(std::floor(s.geom[1] / kSurfelCellSize))}];
    }
    for (const auto& [cell, count] : per_cell) bad_cell += count > 1;
    bad_idem += !(filter_surfels(out) == out);
  }
  const bool pass = bad_ratio == 0 && bad_cell == 0 && bad_idem == 0;
  return {pass, fmt::format("500 fuzzed maps, {} surfels in, {} kept; l1/l2 > 0.1: {}; cells with > 1: {}; "
                            "non-idempotent: {}",
                            seen, kept, bad_ratio, bad_cell, bad_idem)};
}

// Independent recomputation from frames.csv.
struct Recomputed {
  int trials = 0, ok = 0;
  std::array<std::vector<double>, 3> err;
};

Recomputed ReadCsv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  auto col = [&](const char* name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  const std::size_t status = col("status"), lon = col("err_lon"), lat = col("err_lat"), yaw = col("err_yaw_deg");
  Recomputed r;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    ++r.trials;
    if (cells.at(status) != "ok") continue;
    ++r.ok;
    r.err[0].push_back(std::stod(cells.at(lon)));
    r.err[1].push_back(std::stod(cells.at(lat)));
    r.err[2].push_back(std::stod(cells.at(yaw)));
  }
  return r;
}

// Returns the largest deviation from the summary, or infinity on a
// structural mismatch (null vs number, counts).
double CompareReport(const fs::path& dir, bool& invariants) {
  const Recomputed r = ReadCsv(dir / "frames.csv");
  std::ifstream sin(dir / "summary.json");
  const json s = json::parse(sin);
  double worst = 0.0;
  auto cmp = [&](const json& v, std::optional<double> want) {
    if (!want) {
      if (!v.is_null()) worst = INFINITY;
      return;
    }
    if (!v.is_number()) {
      worst = INFINITY;
      return;
    }
    worst = std::max(worst, std::abs(v.get<double>() - *want));
  };
  if (s["trials"] != r.trials || s["succeeded"] != r.ok || s["failed"] != r.trials - r.ok) worst = INFINITY;
  const char* names[3] = {"lon", "lat", "yaw_deg"};
  const std::array<std::array<const char*, 3>, 3> keys{{{"0.1", "0.2", "0.3"}, {"0.1", "0.2", "0.3"}, {"0.1", "0.3", "0.6"}}};
  const std::array<std::array<double, 3>, 3> thr{{{0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}, {0.1, 0.3, 0.6}}};
  const double n = static_cast<double>(r.ok);
  for (int a = 0; a < 3; ++a) {
    const auto& e = r.err[static_cast<std::size_t>(a)];
    std::optional<double> mae, rmse;
    std::array<std::optional<double>, 3> pct;
    if (r.ok > 0) {
      double sa = 0, sq = 0;
      for (double x : e) {
        sa += std::abs(x);
        sq += x * x;
      }
      mae = sa / n;
      rmse = std::sqrt(sq / n);
      for (int k = 0; k < 3; ++k) {
        pct[static_cast<std::size_t>(k)] =
            100.0 * static_cast<double>(std::count_if(e.begin(), e.end(), [&](double x) { return std::abs(x) < thr[a][k]; })) / n;
      }
      invariants = invariants && *mae <= *rmse + 1e-15 && *pct[0] <= *pct[1] && *pct[1] <= *pct[2];
    }
    const json& axis = s[names[a]];
    cmp(axis["mae"], mae);
    cmp(axis["rmse"], rmse);
    for (int k = 0; k < 3; ++k) cmp(axis["pct_below"][keys[a][k]], pct[static_cast<std::size_t>(k)]);
    if (r.ok > 0) {
      invariants = invariants && axis["mae"].get<double>() <= axis["rmse"].get<double>() &&
                   axis["pct_below"][keys[a][0]].get<double>() <= axis["pct_below"][keys[a][1]].get<double>() &&
                   axis["pct_below"][keys[a][1]].get<double>() <= axis["pct_below"][keys[a][2]].get<double>();
    }
  }
  std::optional<double> ar;
  if (r.ok > 0) {
    int avail = 0;
    for (int i = 0; i < r.ok; ++i) {
      avail += std::abs(r.err[0][static_cast<std::size_t>(i)]) < 0.6 &&
               std::abs(r.err[1][static_cast<std::size_t>(i)]) < 0.3 &&
               std::abs(r.err[2][static_cast<std::size_t>(i)]) < 1.0;
    }
    ar = 100.0 * avail / n;
  }
  cmp(s["available_ratio"], ar);
  return worst;
}

Outcome Criterion10() {
  // Reports from the experiments above plus edge cases: an empty trial set
  // and one where some frames fail.
  std::vector<fs::path> dirs;
  for (const char* d : {"oracle", "noise", "untrained", "trained"}) {
    if (fs::exists(OutDir() / d / "summary.json")) dirs.push_back(OutDir() / d);
  }
  {
    ExperimentResult empty;
    empty.report = aggregate(empty.frames);
    emit_report(empty, OutDir() / "empty");
    dirs.push_back(OutDir() / "empty");
  }
  {
    ExperimentConfig c = Config("toy.json");
    c.trials = 12;
    ExperimentResult r = run_experiment(c);
    // Mark every third frame failed, as a solver exception would.
    for (std::size_t k = 0; k < r.frames.size(); k += 3) {
      r.frames[k].ok = false;
      r.frames[k].error = "injected failure";
    }
    r.report = aggregate(r.frames);
    emit_report(r, OutDir() / "with_failures");
    dirs.push_back(OutDir() / "with_failures");
  }
  bool invariants = true;
  double worst = 0.0;
  for (const fs::path& d : dirs) worst = std::max(worst, CompareReport(d, invariants));
  const bool pass = worst <= kC10Tol && invariants;
  return {pass, fmt::format("{} reports recomputed from frames.csv; max |diff|={:.2e} (<= {:.0e}); "
                            "MAE <= RMSE and monotone thresholds: {}",
                            dirs.size(), worst, kC10Tol, invariants ? "yes" : "no")};
}

const char* kNames[] = {"",
                        "oracle recovery",
                        "noise robustness",
                        "multi-level monotonicity",
                        "posterior/covariance suite",
                        "oracle equivalence",
                        "gradient checks",
                        "training sanity",
                        "projection exactness",
                        "surfel filter",
                        "metrics integrity"};

}  // namespace
}  // namespace vecloc

int main(int argc, char** argv) {
  using namespace vecloc;
  const std::vector<std::function<Outcome()>> criteria{
      nullptr,    Criterion1, Criterion2, Criterion3, Criterion4, Criterion5,
      Criterion6, Criterion7, Criterion8, Criterion9, Criterion10};
  std::set<int> selected;
  for (int k = 1; k < argc; ++k) selected.insert(std::atoi(argv[k]));
  if (selected.empty()) {
    for (int k = 1; k <= 10; ++k) selected.insert(k);
  }
  fs::create_directories(OutDir());
  const auto t0 = Clock::now();
  int failed = 0;
  for (int k : selected) {
    if (k < 1 || k > 10) {
      std::fprintf(stderr, "unknown criterion %d\n", k);
      return 64;
    }
    const auto tk = Clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(k)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] criterion %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", k, kNames[k],
                o.detail.c_str(), Seconds(tk));
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed, %.1f s total\n", selected.size(), failed, Seconds(t0));
  return failed;
}
