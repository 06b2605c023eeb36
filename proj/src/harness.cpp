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

#include "vecloc/harness.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "vecloc/errors.hpp"
#include "vecloc/text_format.hpp"

namespace vecloc {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Reads keys of one config object and rejects any it did not ask for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(fmt::format("config: '{}' must be an object", where()));
  }

  template <class T>
  void get(const char* key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ValidationError(fmt::format("config: '{}{}' has the wrong type", path_, key));
    }
  }

  void get_degrees(const char* key, double& radians) {
    double deg = rad_to_deg(radians);
    get(key, deg);
    radians = deg_to_rad(deg);
  }

  std::optional<Section> child(const char* key) {
    const auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    used_.insert(key);
    return Section(*it, path_ + key + ".");
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) {
        throw ValidationError(fmt::format("config: unknown key '{}{}'", path_, item.key()));
      }
    }
  }

  const json& raw() const { return j_; }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_.substr(0, path_.size() - 1); }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_range(Section s, SearchRange& r) {
  s.get("x", r.x);
  s.get("y", r.y);
  s.get_degrees("yaw_deg", r.yaw);
  s.finish();
}

json range_json(const SearchRange& r) {
  return {{"x", r.x}, {"y", r.y}, {"yaw_deg", rad_to_deg(r.yaw)}};
}

void read_dims(Section s, MatcherDims& d) {
  s.get("channels", d.channels);
  s.get("heads", d.heads);
  s.get("points", d.points);
  s.get("layers", d.layers);
  s.get("ffn_hidden", d.ffn_hidden);
  s.get("head_hidden", d.head_hidden);
  s.get("level_channels", d.level_channels);
  s.finish();
}

json dims_json(const MatcherDims& d) {
  return {{"channels", d.channels},     {"heads", d.heads},
          {"points", d.points},         {"layers", d.layers},
          {"ffn_hidden", d.ffn_hidden}, {"head_hidden", d.head_hidden},
          {"level_channels", d.level_channels}};
}

std::string_view source_name(MatcherSource s) {
  switch (s) {
    case MatcherSource::kOracle: return "oracle";
    case MatcherSource::kInit: return "init";
    case MatcherSource::kCheckpoint: return "checkpoint";
  }
  return "oracle";
}

MatcherSource source_from(const std::string& name) {
  if (name == "oracle") return MatcherSource::kOracle;
  if (name == "init") return MatcherSource::kInit;
  if (name == "checkpoint") return MatcherSource::kCheckpoint;
  throw ValidationError(fmt::format("config: unknown matcher source '{}'", name));
}

json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string csv_real(double v) { return std::isfinite(v) ? format_real(v) : std::string("nan"); }

std::string csv_text(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

AxisMetrics axis_metrics(const std::vector<double>& e, std::span<const double> thresholds) {
  AxisMetrics m;
  if (e.empty()) {
    m.mae = m.rmse = kNaN;
    m.pct_below.fill(kNaN);
    return m;
  }
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  std::array<int, 3> below{};
  for (double v : e) {
    abs_sum += std::abs(v);
    sq_sum += v * v;
    for (std::size_t k = 0; k < 3; ++k) below[k] += std::abs(v) < thresholds[k] ? 1 : 0;
  }
  const double n = static_cast<double>(e.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  for (std::size_t k = 0; k < 3; ++k) m.pct_below[k] = 100.0 * below[k] / n;
  return m;
}

json axis_json(const AxisMetrics& m, std::span<const double> thresholds) {
  json pct = json::object();
  for (std::size_t k = 0; k < 3; ++k) {
    pct[fmt::format("{}", thresholds[k])] = real_or_null(m.pct_below[k]);
  }
  return {{"mae", real_or_null(m.mae)}, {"rmse", real_or_null(m.rmse)}, {"pct_below", pct}};
}

// Posterior marginals per axis, for plotting.
json histogram_json(const SolverResult& solve) {
  json levels = json::array();
  for (const LevelResult& level : solve.levels) {
    const int nx = candidate_axis_count(level.range.x, level.step.x);
    const int ny = candidate_axis_count(level.range.y, level.step.y);
    const int nz = candidate_axis_count(level.range.yaw, level.step.yaw);
    std::vector<double> mx(static_cast<std::size_t>(nx)), my(static_cast<std::size_t>(ny)),
        mz(static_cast<std::size_t>(nz));
    std::vector<double> cx, cy, cz;
    for (int i = 0; i < nx; ++i) cx.push_back(-level.range.x + i * level.step.x);
    for (int i = 0; i < ny; ++i) cy.push_back(-level.range.y + i * level.step.y);
    for (int i = 0; i < nz; ++i) cz.push_back(rad_to_deg(-level.range.yaw + i * level.step.yaw));
    std::size_t n = 0;
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) {
        for (int k = 0; k < nz; ++k, ++n) {
          const double p = level.posterior.probs[n];
          mx[static_cast<std::size_t>(i)] += p;
          my[static_cast<std::size_t>(j)] += p;
          mz[static_cast<std::size_t>(k)] += p;
        }
      }
    }
    levels.push_back({{"level", level.level},
                      {"x", {{"centers", cx}, {"prob", mx}}},
                      {"y", {{"centers", cy}, {"prob", my}}},
                      {"yaw_deg", {{"centers", cz}, {"prob", mz}}}});
  }
  return {{"format", "vecloc-score-histograms"}, {"version", 1}, {"levels", levels}};
}

}  // namespace

std::string serialize_poses(std::span<const PoseRecord> records) {
  std::string out = fmt::format("{{\"format\":\"vecloc-poses\",\"version\":1,\"count\":{}}}\n",
                                records.size());
  for (const PoseRecord& r : records) {
    out += fmt::format("{{\"id\":{},\"tag\":{},\"t\":[{},{},{}],\"R\":[", r.id, json(r.tag).dump(),
                       format_real(r.pose.t.x()), format_real(r.pose.t.y()),
                       format_real(r.pose.t.z()));
    for (int k = 0; k < 9; ++k) {
      if (k != 0) out += ',';
      out += format_real(r.pose.R(k / 3, k % 3));
    }
    out += "]}\n";
  }
  return out;
}

std::vector<PoseRecord> parse_poses(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool have_header = false;
  std::int64_t declared = -1;
  std::vector<PoseRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(fmt::format("line {}: {}", line_no, e.what()));
    }
    try {
      if (!have_header) {
        if (record.value("format", std::string()) != "vecloc-poses") {
          throw ParseError(fmt::format("line {}: missing pose header", line_no));
        }
        if (record.at("version").get<int>() != 1) {
          throw ParseError(fmt::format("line {}: unsupported pose version", line_no));
        }
        declared = record.at("count").get<std::int64_t>();
        have_header = true;
        continue;
      }
      PoseRecord r;
      r.id = record.at("id").get<std::int64_t>();
      r.tag = record.value("tag", std::string());
      const auto t = record.at("t").get<std::vector<double>>();
      const auto R = record.at("R").get<std::vector<double>>();
      if (t.size() != 3 || R.size() != 9) {
        throw ParseError(fmt::format("line {}: pose needs 3 translation and 9 rotation values", line_no));
      }
      r.pose.t = {t[0], t[1], t[2]};
      for (int k = 0; k < 9; ++k) r.pose.R(k / 3, k % 3) = R[static_cast<std::size_t>(k)];
      try {
        r.pose.validate();
      } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("line {}: {}", line_no, e.what()));
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  if (!have_header) throw ParseError("pose file has no header");
  if (declared != static_cast<std::int64_t>(out.size())) {
    throw ParseError(fmt::format("pose header declares {} records, found {}", declared, out.size()));
  }
  return out;
}

void save_poses(std::span<const PoseRecord> records, const std::filesystem::path& path) {
  write_text(path, serialize_poses(records));
}

std::vector<PoseRecord> load_poses(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_poses(buf.str());
}

void ExperimentConfig::validate() const {
  scene.validate();
  solver.validate();
  matcher.dims.validate();
  if (scenes < 1) throw ValidationError("config: scenes must be at least 1");
  if (trials < 0) throw ValidationError("config: trials must be nonnegative");
  if (!(frame.noise_rel >= 0.0)) throw ValidationError("config: noise_rel must be nonnegative");
  for (double p : frame.dropout) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("config: dropout must be in [0, 1]");
  }
  if (frame.pyramid.base.H <= 0 || frame.pyramid.base.W <= 0 ||
      !(frame.pyramid.base.resolution > 0.0)) {
    throw ValidationError("config: grid must have positive size and resolution");
  }
  if (matcher.source == MatcherSource::kCheckpoint && matcher.checkpoint.empty()) {
    throw ValidationError("config: checkpoint source needs a checkpoint path");
  }
  if (training.enabled) {
    if (training.frames < 1) throw ValidationError("config: training needs at least one frame");
    if (!(training.config.learning_rate >= 0.0) || training.config.iterations < 0) {
      throw ValidationError("config: learning rate and iterations must be nonnegative");
    }
    const LossWeights& w = training.config.loss.weights;
    if (!(w.rmse >= 0.0 && w.pose_solver_kl >= 0.0 && w.random_pose_kl >= 0.0 && w.focal >= 0.0)) {
      throw ValidationError("config: loss weights must be nonnegative");
    }
    training.config.loss.random_pose.validate();
  }
}

ExperimentConfig parse_experiment_config(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "");
  root.get("seed", c.seed);
  root.get("trials", c.trials);
  root.get("scenes", c.scenes);
  if (auto s = root.child("scene")) {
    SceneSpec& sc = c.scene;
    s->get("seed", sc.seed);
    s->get("road_length", sc.road_length);
    s->get("straight_fraction", sc.straight_fraction);
    s->get("curve_radius", sc.curve_radius);
    s->get("lanes", sc.lanes);
    s->get("lane_width", sc.lane_width);
    s->get("dash_length", sc.dash_length);
    s->get("dash_gap", sc.dash_gap);
    s->get("boundary_piece", sc.boundary_piece);
    s->get("poles_per_km", sc.poles_per_km);
    s->get("signs_per_km", sc.signs_per_km);
    s->get("surfels_per_km", sc.surfels_per_km);
    s->get("crossings_per_km", sc.crossings_per_km);
    s->get("markings_per_km", sc.markings_per_km);
    s->finish();
  }
  if (auto s = root.child("frame")) {
    FrameSpec& f = c.frame;
    if (auto g = s->child("grid")) {
      int H = f.pyramid.base.H, W = f.pyramid.base.W;
      double r = f.pyramid.base.resolution;
      g->get("H", H);
      g->get("W", W);
      g->get("resolution", r);
      g->finish();
      if (H <= 0 || W <= 0 || !(r > 0.0)) {
        throw ValidationError("config: grid must have positive size and resolution");
      }
      f.pyramid.base = GridSpec::centered(H, W, r);
    }
    if (auto p = s->child("perturb")) read_range(*p, f.perturb);
    s->get("noise_rel", f.noise_rel);
    if (auto d = s->child("dropout")) {
      for (const auto& item : d->raw().items()) {
        double p = 0.0;
        d->get(item.key().c_str(), p);
        try {
          f.dropout[static_cast<std::size_t>(index_of(semantic_type_from_string(item.key())))] = p;
        } catch (const ParseError& e) {
          throw ValidationError(fmt::format("config: frame.dropout: {}", e.what()));
        }
      }
      d->finish();
    }
    s->get_degrees("max_tilt_deg", f.max_tilt);
    s->get("lateral_jitter", f.lateral_jitter);
    s->get("along_jitter", f.along_jitter);
    s->get_degrees("heading_jitter_deg", f.heading_jitter);
    s->get("min_visible", f.min_visible);
    s->get("max_attempts", f.max_attempts);
    s->finish();
  }
  if (auto s = root.child("solver")) {
    SolverConfig& sv = c.solver;
    if (auto r = s->child("range")) read_range(*r, sv.range);
    if (auto r = s->child("step")) read_range(*r, sv.step);
    s->get("levels", sv.levels);
    s->get("samples_per_10m", sv.sampling.per_ten_meters);
    s->get("parallel", sv.parallel);
    s->finish();
  }
  if (auto s = root.child("matcher")) {
    MatcherConfig& m = c.matcher;
    std::string source(source_name(m.source));
    s->get("source", source);
    m.source = source_from(source);
    if (auto d = s->child("dims")) read_dims(*d, m.dims);
    s->get("oracle_scales", m.oracle_scales);
    s->get("init_seed", m.init_seed);
    std::string checkpoint = m.checkpoint.string();
    s->get("checkpoint", checkpoint);
    m.checkpoint = checkpoint;
    s->finish();
  }
  if (auto s = root.child("training")) {
    TrainingSetup& t = c.training;
    s->get("enabled", t.enabled);
    s->get("frames", t.frames);
    s->get("iterations", t.config.iterations);
    s->get("learning_rate", t.config.learning_rate);
    s->get("divergence_limit", t.config.divergence_limit);
    s->get("seed", t.config.loss.seed);
    if (auto w = s->child("weights")) {
      w->get("rmse", t.config.loss.weights.rmse);
      w->get("pose_solver_kl", t.config.loss.weights.pose_solver_kl);
      w->get("random_pose_kl", t.config.loss.weights.random_pose_kl);
      w->get("focal", t.config.loss.weights.focal);
      w->finish();
    }
    if (auto r = s->child("random_pose")) {
      RandomPoseDistribution& q = t.config.loss.random_pose;
      std::array<double, 2> scale{q.scale(0, 0), q.scale(1, 1)};
      r->get("nu", q.nu);
      r->get("scale", scale);
      r->get("kappa", q.kappa);
      r->get("uniform_weight", q.uniform_weight);
      r->get("samples", q.samples);
      r->finish();
      q.scale = Eigen::Vector2d(scale[0], scale[1]).asDiagonal();
    }
    if (auto f = s->child("focal")) {
      f->get("gamma", t.config.loss.focal.gamma);
      f->get("alpha", t.config.loss.focal.alpha);
      f->finish();
    }
    s->finish();
  }
  root.finish();
  c.frame.pyramid.channels = c.matcher.dims.level_channels;
  c.training.config.loss.solver = c.solver;
  c.training.config.loss.random_pose.yaw_range = c.solver.range.yaw;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open config {}", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("config {}: {}", path.string(), e.what()));
  }
  return parse_experiment_config(doc);
}

json to_json(const ExperimentConfig& c) {
  json dropout = json::object();
  for (int j = 0; j < kNumSemanticTypes; ++j) {
    const double p = c.frame.dropout[static_cast<std::size_t>(j)];
    if (p != 0.0) dropout[std::string(to_string(static_cast<SemanticType>(j)))] = p;
  }
  const SceneSpec& s = c.scene;
  const TrainingConfig& t = c.training.config;
  return {
      {"seed", c.seed},
      {"trials", c.trials},
      {"scenes", c.scenes},
      {"scene",
       {{"seed", s.seed},
        {"road_length", s.road_length},
        {"straight_fraction", s.straight_fraction},
        {"curve_radius", s.curve_radius},
        {"lanes", s.lanes},
        {"lane_width", s.lane_width},
        {"dash_length", s.dash_length},
        {"dash_gap", s.dash_gap},
        {"boundary_piece", s.boundary_piece},
        {"poles_per_km", s.poles_per_km},
        {"signs_per_km", s.signs_per_km},
        {"surfels_per_km", s.surfels_per_km},
        {"crossings_per_km", s.crossings_per_km},
        {"markings_per_km", s.markings_per_km}}},
      {"frame",
       {{"grid",
         {{"H", c.frame.pyramid.base.H},
          {"W", c.frame.pyramid.base.W},
          {"resolution", c.frame.pyramid.base.resolution}}},
        {"perturb", range_json(c.frame.perturb)},
        {"noise_rel", c.frame.noise_rel},
        {"dropout", dropout},
        {"max_tilt_deg", rad_to_deg(c.frame.max_tilt)},
        {"lateral_jitter", c.frame.lateral_jitter},
        {"along_jitter", c.frame.along_jitter},
        {"heading_jitter_deg", rad_to_deg(c.frame.heading_jitter)},
        {"min_visible", c.frame.min_visible},
        {"max_attempts", c.frame.max_attempts}}},
      {"solver",
       {{"range", range_json(c.solver.range)},
        {"step", range_json(c.solver.step)},
        {"levels", c.solver.levels},
        {"samples_per_10m", c.solver.sampling.per_ten_meters},
        {"parallel", c.solver.parallel}}},
      {"matcher",
       {{"source", source_name(c.matcher.source)},
        {"dims", dims_json(c.matcher.dims)},
        {"oracle_scales", c.matcher.oracle_scales},
        {"init_seed", c.matcher.init_seed},
        {"checkpoint", c.matcher.checkpoint.string()}}},
      {"training",
       {{"enabled", c.training.enabled},
        {"frames", c.training.frames},
        {"iterations", t.iterations},
        {"learning_rate", t.learning_rate},
        {"divergence_limit", t.divergence_limit},
        {"seed", t.loss.seed},
        {"weights",
         {{"rmse", t.loss.weights.rmse},
          {"pose_solver_kl", t.loss.weights.pose_solver_kl},
          {"random_pose_kl", t.loss.weights.random_pose_kl},
          {"focal", t.loss.weights.focal}}},
        {"random_pose",
         {{"nu", t.loss.random_pose.nu},
          {"scale", {t.loss.random_pose.scale(0, 0), t.loss.random_pose.scale(1, 1)}},
          {"kappa", t.loss.random_pose.kappa},
          {"uniform_weight", t.loss.random_pose.uniform_weight},
          {"samples", t.loss.random_pose.samples}}},
        {"focal", {{"gamma", t.loss.focal.gamma}, {"alpha", t.loss.focal.alpha}}}}}};
}

AxisErrors decompose_error(const Pose6& estimate, const Pose6& gt) {
  const Eigen::Vector2d d = (estimate.t - gt.t).head<2>();
  const double yaw = gt.yaw();
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(),
          rad_to_deg(wrap_yaw(estimate.yaw() - yaw))};
}

MetricsReport aggregate(std::span<const FrameResult> frames) {
  MetricsReport r;
  r.trials = static_cast<int>(frames.size());
  std::vector<double> lon, lat, yaw;
  int available = 0;
  for (const FrameResult& f : frames) {
    if (!f.ok) {
      ++r.failed;
      continue;
    }
    ++r.succeeded;
    lon.push_back(f.error_axes.lon);
    lat.push_back(f.error_axes.lat);
    yaw.push_back(f.error_axes.yaw_deg);
    available += std::abs(f.error_axes.lon) < kAvailableLon &&
                 std::abs(f.error_axes.lat) < kAvailableLat &&
                 std::abs(f.error_axes.yaw_deg) < kAvailableYawDeg;
  }
  r.lon = axis_metrics(lon, kMetricThresholds);
  r.lat = axis_metrics(lat, kMetricThresholds);
  r.yaw = axis_metrics(yaw, kYawThresholdsDeg);
  r.available_ratio = r.succeeded > 0 ? 100.0 * available / r.succeeded : kNaN;
  return r;
}

Model<double> build_matcher(const MatcherConfig& config) {
  switch (config.source) {
    case MatcherSource::kOracle:
      return oracle_model(config.dims, config.init_seed, config.oracle_scales);
    case MatcherSource::kInit:
      return init_model(config.dims, config.init_seed);
    case MatcherSource::kCheckpoint: {
      Model<double> m = load_checkpoint(config.checkpoint);
      if (!(m.dims == config.dims)) {
        throw ValidationError("checkpoint dims differ from the configured matcher dims");
      }
      return m;
    }
  }
  throw ValidationError("unknown matcher source");
}

Frame experiment_frame(const ExperimentConfig& config, const SignatureSet& signatures,
                       std::uint64_t index) {
  SceneSpec spec = config.scene;
  spec.seed += index % static_cast<std::uint64_t>(config.scenes);
  FrameSpec frame = config.frame;
  frame.pyramid.channels = config.matcher.dims.level_channels;
  return make_frame(generate_scene(spec), signatures, frame, config.seed, index);
}

std::vector<Frame> training_frames(const ExperimentConfig& config, const SignatureSet& signatures) {
  FrameSpec frame_spec = config.frame;
  frame_spec.pyramid.channels = config.matcher.dims.level_channels;
  const std::uint64_t train_seed = split_rng(config.seed, 1)();
  std::vector<Frame> train;
  for (int k = 0; k < config.training.frames; ++k) {
    SceneSpec spec = config.scene;
    spec.seed = split_rng(config.scene.seed, 1000 + static_cast<std::uint64_t>(k))();
    train.push_back(make_frame(generate_scene(spec), signatures, frame_spec, train_seed,
                               static_cast<std::uint64_t>(k)));
  }
  return train;
}

GradCheckSetup make_gradcheck_setup(std::uint64_t seed) {
  const MatcherDims dims = MatcherDims::toy();
  GradCheckSetup g{init_model(dims, seed), {}, {}};
  SceneSpec scene;
  scene.seed = seed;
  scene.road_length = 200.0;
  FrameSpec spec;
  spec.pyramid.base = GridSpec::centered(16, 16, 0.5);
  spec.pyramid.channels = dims.level_channels;
  spec.min_visible = 4;
  g.frame = make_frame(generate_scene(scene), oracle_signatures(g.model), spec, seed, 0);
  g.frame.elements.resize(4);
  g.loss.solver.range = {1.0, 1.0, deg_to_rad(1.0)};
  g.loss.solver.step = {0.5, 0.5, deg_to_rad(0.5)};
  g.loss.random_pose.yaw_range = g.loss.solver.range.yaw;
  g.loss.seed = seed;
  return g;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult result;
  Model<double> model = build_matcher(config.matcher);
  // Frames are rendered with the signatures of the matcher before training.
  const SignatureSet signatures = oracle_signatures(model);
  FrameSpec frame_spec = config.frame;
  frame_spec.pyramid.channels = config.matcher.dims.level_channels;

  if (config.training.enabled) {
    const std::vector<Frame> train = training_frames(config, signatures);
    TrainingConfig tc = config.training.config;
    tc.loss.solver = config.solver;
    tc.loss.solver.parallel = false;
    TrainingResult trained = train_loop(model, train, tc);
    model = std::move(trained.model);
    result.training_log = std::move(trained.log);
  }

  std::vector<Scene> scenes;
  for (int s = 0; s < config.scenes; ++s) {
    SceneSpec spec = config.scene;
    spec.seed += static_cast<std::uint64_t>(s);
    scenes.push_back(generate_scene(spec));
  }
  SolverConfig solver = config.solver;
  solver.parallel = false;  // frames are the parallel unit
  const int N = config.trials;
  result.frames.resize(static_cast<std::size_t>(N));
  std::vector<std::optional<SolverResult>> solves(static_cast<std::size_t>(N));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < N; ++i) {
    FrameResult& out = result.frames[static_cast<std::size_t>(i)];
    out.id = static_cast<std::uint64_t>(i);
    try {
      const Frame frame = make_frame(scenes[static_cast<std::size_t>(i % config.scenes)],
                                     signatures, frame_spec, config.seed, out.id);
      out.elements = static_cast<int>(frame.elements.size());
      out.true_offset = frame.true_offset;
      const auto emb = decode(model, frame.elements, frame.init_pose, frame.pyramid.layers[0]);
      SolverResult solve =
          solve_multilevel(frame.pyramid, frame.elements, emb, frame.init_pose, solver, model);
      out.estimated_offset = solve.delta;
      out.error_axes = decompose_error(solve.final_pose, frame.gt_pose);
      Pose6 walked = frame.init_pose;
      out.path_errors.push_back(decompose_error(walked, frame.gt_pose));
      for (const LevelResult& level : solve.levels) {
        walked = compose(walked, level.delta);
        out.path_errors.push_back(decompose_error(walked, frame.gt_pose));
      }
      out.sigma_diag = solve.sigma.back().diagonal();
      out.ok = true;
      if (i == 0) solves[0] = std::move(solve);
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  }
  result.report = aggregate(result.frames);
  if (N > 0 && solves[0]) result.sample_solve = std::move(solves[0]);
  return result;
}

std::string frames_csv(std::span<const FrameResult> frames) {
  std::string out =
      "frame_id,status,elements,true_dx,true_dy,true_dyaw_deg,est_dx,est_dy,est_dyaw_deg,"
      "err_lon,err_lat,err_yaw_deg,sigma_xx,sigma_yy,sigma_yawyaw,error\n";
  for (const FrameResult& f : frames) {
    const bool ok = f.ok;
    auto val = [&](double v) { return ok ? csv_real(v) : std::string("nan"); };
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", f.id,
                       ok ? "ok" : "failed", f.elements, csv_real(f.true_offset.dx),
                       csv_real(f.true_offset.dy), csv_real(rad_to_deg(f.true_offset.dpsi)),
                       val(f.estimated_offset.dx), val(f.estimated_offset.dy),
                       val(rad_to_deg(f.estimated_offset.dpsi)), val(f.error_axes.lon),
                       val(f.error_axes.lat), val(f.error_axes.yaw_deg), val(f.sigma_diag.x()),
                       val(f.sigma_diag.y()), val(f.sigma_diag.z()), csv_text(f.error));
  }
  return out;
}

json report_json(const MetricsReport& r) {
  return {{"format", "vecloc-summary"},
          {"version", 1},
          {"trials", r.trials},
          {"succeeded", r.succeeded},
          {"failed", r.failed},
          {"lon", axis_json(r.lon, kMetricThresholds)},
          {"lat", axis_json(r.lat, kMetricThresholds)},
          {"yaw_deg", axis_json(r.yaw, kYawThresholdsDeg)},
          {"available_ratio", real_or_null(r.available_ratio)}};
}

void emit_report(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  write_text(dir / "frames.csv", frames_csv(result.frames));
  write_text(dir / "summary.json", report_json(result.report).dump(2) + "\n");

  const MetricsReport& r = result.report;
  auto cell = [](double v) { return std::isfinite(v) ? fmt::format("{:10.4f}", v) : fmt::format("{:>10}", "nan"); };
  std::string txt = fmt::format("trials {}  succeeded {}  failed {}\n\n", r.trials, r.succeeded, r.failed);
  txt += fmt::format("{:<14}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "axis", "MAE", "RMSE", "<t1 %", "<t2 %", "<t3 %");
  auto row = [&](const char* name, const AxisMetrics& m) {
    txt += fmt::format("{:<14}{}{}{}{}{}\n", name, cell(m.mae), cell(m.rmse), cell(m.pct_below[0]),
                       cell(m.pct_below[1]), cell(m.pct_below[2]));
  };
  row("lon [m]", r.lon);
  row("lat [m]", r.lat);
  row("yaw [deg]", r.yaw);
  txt += fmt::format("\nthresholds: 0.1/0.2/0.3 m, 0.1/0.3/0.6 deg (strict)\n");
  txt += fmt::format("available ratio (lon<0.6 m, lat<0.3 m, yaw<1 deg): {} %\n", cell(r.available_ratio));
  write_text(dir / "summary.txt", txt);

  if (result.sample_solve) {
    write_text(dir / "score_histograms.json", histogram_json(*result.sample_solve).dump() + "\n");
    write_solver_dump(*result.sample_solve, dir / "solver_dump.json");
  }
  if (!result.training_log.empty()) {
    std::string log;
    for (const TrainingRecord& rec : result.training_log) log += training_record_json(rec) + "\n";
    write_text(dir / "train_log.jsonl", log);
  }
}

}  // namespace vecloc
