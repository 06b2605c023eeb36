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

#ifndef VECLOC_POSE_SOLVER_HPP_
#define VECLOC_POSE_SOLVER_HPP_

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vecloc/bev_grid.hpp"
#include "vecloc/geometry.hpp"
#include "vecloc/matcher.hpp"

namespace vecloc {

struct SolverConfig {
  SearchRange range{3.0, 3.0, deg_to_rad(3.0)};
  SearchRange step{0.5, 0.5, deg_to_rad(0.5)};
  int levels = kPyramidLevels;
  SegmentSampling sampling;
  bool parallel = true;

  // Level l halves both the range and the step, so every level has the same
  // candidate count.
  SearchRange range_at(int level) const;
  SearchRange step_at(int level) const;

  // Throws ValidationError. The yaw range must stay below 30 degrees since
  // yaw is averaged on the real line.
  void validate() const;
};

struct Posterior {
  std::vector<PoseOffset3> offsets;
  std::vector<double> probs;
};

// Element points lifted onto the BEV plane of a base pose. Candidates move
// the sensor on that plane, so the lift is shared by all of them.
struct ScoreGeometry {
  GridSpec spec;
  Eigen::Matrix3d Rt = Eigen::Matrix3d::Identity();  // base rotation, transposed
  double yaw = 0.0;
  std::vector<Eigen::Vector3d> rel;  // lifted point minus base translation
  std::vector<int> begin;            // element i owns [begin[i], begin[i+1])

  static ScoreGeometry build(const Pose6& base, std::span<const MapElement> elements,
                             const GridSpec& spec, const SegmentSampling& sampling);

  int elements() const { return static_cast<int>(begin.size()) - 1; }
};

// Maps relative points to grid coordinates for one candidate offset.
struct CandidateTransform {
  double a00, a01, a02, a10, a11, a12, b0, b1;
  double inv_res, h_min, w_min;

  CandidateTransform(const ScoreGeometry& geometry, const PoseOffset3& offset);

  Eigen::Vector2d grid_point(const Eigen::Vector3d& q) const {
    const double x = a00 * q.x() + a01 * q.y() + a02 * q.z() - b0;
    const double y = a10 * q.x() + a11 * q.y() + a12 * q.z() - b1;
    return {(x - h_min) * inv_res, (y - w_min) * inv_res};
  }
};

// S(T) = (1/K) sum_i h(mean_p sample(F, p_i(T)) (.) e_i). `grid` and the
// embeddings must share a channel count; K = 0 throws ArgumentError.
std::vector<double> score_candidates(const BevGrid& grid, const ScoreGeometry& geometry,
                                     const std::vector<std::vector<double>>& embeddings,
                                     const ScoreHead<double>& head,
                                     std::span<const PoseOffset3> candidates,
                                     bool parallel = true);

// Projects `elements` on the base pose's plane first.
std::vector<double> score_candidates(const BevGrid& grid, std::span<const MapElement> elements,
                                     const std::vector<std::vector<double>>& embeddings,
                                     std::span<const PoseOffset3> candidates,
                                     const Pose6& base_pose, const ScoreHead<double>& head,
                                     const SegmentSampling& sampling = {});

// Gradients of sum_n dscores[n] * S_n, where S_n is scored on the raw grid
// after the channel projection P (C x C) is applied to the samples.
struct ScoreGradients {
  std::vector<std::vector<double>> embeddings;  // K x C
  Mat<double> projection;                        // C x C
  Mat<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
};

ScoreGradients score_candidates_backward(const BevGrid& raw_grid, const Mat<double>& projection,
                                         const ScoreGeometry& geometry,
                                         const std::vector<std::vector<double>>& embeddings,
                                         const ScoreHead<double>& head,
                                         std::span<const PoseOffset3> candidates,
                                         std::span<const double> dscores);

// Max-shifted softmax.
Posterior posterior(std::span<const PoseOffset3> offsets, std::span<const double> scores);

PoseOffset3 expected_offset(const Posterior& post);

Eigen::Matrix3d offset_covariance(const Posterior& post, const PoseOffset3& delta);

inline Eigen::Vector3d as_vector(const PoseOffset3& o) { return {o.dx, o.dy, o.dpsi}; }

struct LevelResult {
  int level = 0;
  Pose6 base_pose;
  SearchRange range;
  SearchRange step;
  std::vector<double> scores;
  Posterior posterior;
  PoseOffset3 delta;
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
};

struct SolverResult {
  PoseOffset3 delta;  // sum of the level offsets
  Pose6 final_pose;   // init composed with each level offset in turn
  std::vector<Eigen::Matrix3d> sigma;
  std::vector<LevelResult> levels;
};

// Embeddings are the decoder outputs (K x C); each level projects them and
// the BEV features with that level's matcher projections.
SolverResult solve_multilevel(const BevPyramid& pyramid, std::span<const MapElement> elements,
                              const std::vector<std::vector<double>>& embeddings,
                              const Pose6& init_pose, const SolverConfig& config,
                              const Model<double>& model);

// Per-level score histograms with axis metadata, x outermost and yaw
// innermost.
void write_solver_dump(const SolverResult& result, const std::filesystem::path& path);

}  // namespace vecloc

#endif  // VECLOC_POSE_SOLVER_HPP_
