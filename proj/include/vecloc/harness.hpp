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

#ifndef VECLOC_HARNESS_HPP_
#define VECLOC_HARNESS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "vecloc/geometry.hpp"
#include "vecloc/matcher.hpp"
#include "vecloc/pose_solver.hpp"
#include "vecloc/synth.hpp"
#include "vecloc/training.hpp"

namespace vecloc {

// Pose records: a JSON header line, then one {"id", "t", "R"} object per
// line with R row-major.
struct PoseRecord {
  std::int64_t id = 0;
  std::string tag;
  Pose6 pose;
};

std::string serialize_poses(std::span<const PoseRecord> records);
std::vector<PoseRecord> parse_poses(std::string_view text);
void save_poses(std::span<const PoseRecord> records, const std::filesystem::path& path);
std::vector<PoseRecord> load_poses(const std::filesystem::path& path);

enum class MatcherSource { kOracle, kInit, kCheckpoint };

struct MatcherConfig {
  MatcherSource source = MatcherSource::kOracle;
  MatcherDims dims;
  std::array<double, kPyramidLevels> oracle_scales{100.0, 100.0, 20.0};
  std::uint64_t init_seed = 7;
  std::filesystem::path checkpoint;
};

struct TrainingSetup {
  bool enabled = false;
  int frames = 8;
  TrainingConfig config;
};

struct ExperimentConfig {
  SceneSpec scene;
  int scenes = 1;  // frame i uses scene seed scene.seed + i % scenes
  FrameSpec frame;
  SolverConfig solver;
  MatcherConfig matcher;
  TrainingSetup training;
  int trials = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys throw ValidationError.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

inline constexpr std::array<double, 3> kMetricThresholds{0.1, 0.2, 0.3};      // m
inline constexpr std::array<double, 3> kYawThresholdsDeg{0.1, 0.3, 0.6};      // degrees
inline constexpr double kAvailableLon = 0.6;
inline constexpr double kAvailableLat = 0.3;
inline constexpr double kAvailableYawDeg = 1.0;

// Errors of the final pose in the gt pose's heading frame; yaw in degrees.
struct AxisErrors {
  double lon = 0.0;
  double lat = 0.0;
  double yaw_deg = 0.0;
};

AxisErrors decompose_error(const Pose6& estimate, const Pose6& gt);

struct FrameResult {
  std::uint64_t id = 0;
  bool ok = false;
  std::string error;
  int elements = 0;
  PoseOffset3 true_offset;
  PoseOffset3 estimated_offset;
  AxisErrors error_axes;
  std::vector<AxisErrors> path_errors;  // init pose, then after each level
  Eigen::Vector3d sigma_diag = Eigen::Vector3d::Zero();  // finest level
};

struct AxisMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::array<double, 3> pct_below{};  // strict <
};

struct MetricsReport {
  int trials = 0;
  int succeeded = 0;
  int failed = 0;
  AxisMetrics lon, lat, yaw;
  double available_ratio = 0.0;  // percent
};

// Over successful frames; every field is NaN when there are none.
MetricsReport aggregate(std::span<const FrameResult> frames);

struct ExperimentResult {
  std::vector<FrameResult> frames;
  MetricsReport report;
  std::optional<SolverResult> sample_solve;  // first successful frame
  std::vector<TrainingRecord> training_log;
};

// The matcher named by the config, before any training.
Model<double> build_matcher(const MatcherConfig& config);

// Frame i of an experiment; deterministic in (config, i).
Frame experiment_frame(const ExperimentConfig& config, const SignatureSet& signatures,
                       std::uint64_t index);

// The fixed training set: one frame from each of training.frames scenes
// whose seeds are disjoint from the evaluation scenes.
std::vector<Frame> training_frames(const ExperimentConfig& config, const SignatureSet& signatures);

// Trains when enabled, then solves `trials` frames. Frame failures are
// recorded and counted, never dropped.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Toy-scale problem for gradient checks: toy dims, 16 x 16 base grid, four
// map elements and 5^3 candidates per level.
struct GradCheckSetup {
  Model<double> model;
  Frame frame;
  LossConfig loss;
};

GradCheckSetup make_gradcheck_setup(std::uint64_t seed);

// frames.csv, summary.json, summary.txt and, when a sample solve exists,
// score_histograms.json.
void emit_report(const ExperimentResult& result, const std::filesystem::path& dir);

std::string frames_csv(std::span<const FrameResult> frames);
nlohmann::json report_json(const MetricsReport& report);

}  // namespace vecloc

#endif  // VECLOC_HARNESS_HPP_
