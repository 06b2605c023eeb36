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

#ifndef VECLOC_TRAINING_HPP_
#define VECLOC_TRAINING_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vecloc/autodiff.hpp"
#include "vecloc/matcher.hpp"
#include "vecloc/pose_solver.hpp"
#include "vecloc/synth.hpp"

namespace vecloc {

// q(T): bivariate t on (dx, dy) times a von Mises / uniform mixture on yaw.
struct RandomPoseDistribution {
  double nu = 3.0;
  Eigen::Matrix2d scale = Eigen::Matrix2d::Identity();  // m^2
  double kappa = 10.0;                                  // 1 / rad^2
  double uniform_weight = 0.2;
  double yaw_range = deg_to_rad(3.0);  // uniform part covers [-r, r]
  int samples = 64;

  void validate() const;
  double density(const PoseOffset3& o) const;
  PoseOffset3 sample(std::mt19937_64& rng) const;

  // Level l of the solver: xy scale / 4^l, kappa * 4^l, yaw range / 2^l.
  RandomPoseDistribution at_level(int level) const;
};

// Unit-trace diagonal of S^{-1} for Sigma = U S U^T, eigenvalues clamped at
// 1e-6. Throws ArgumentError if Sigma is asymmetric or has an eigenvalue
// below -1e-9.
struct RmseWeights {
  Eigen::Matrix3d Ut;
  Eigen::Vector3d lambda;

  static RmseWeights of(const Eigen::Matrix3d& sigma);
};

template <class T>
T rmse_loss(const std::array<T, 3>& delta, const PoseOffset3& delta_gt, const RmseWeights& w);

double rmse_loss(const PoseOffset3& delta, const PoseOffset3& delta_gt,
                 const Eigen::Matrix3d& sigma);

// -S_gt + log(exp(S_gt) + sum_n exp(S_n)).
template <class T>
T pose_solver_kl_loss(std::span<const T> scores, const T& gt_score);

// -S_gt + log((1/N) sum_j exp(S_j) / q_j), from log q_j.
template <class T>
T random_pose_kl_loss(std::span<const T> sample_scores, std::span<const double> log_q,
                      const T& gt_score);

// Draws dist.samples offsets from q (seeded) and scores them together with
// the gt offset in one call to score_fn; the gt score is the last entry.
using ScoreFn = std::function<std::vector<double>(std::span<const PoseOffset3>)>;
double random_pose_kl_loss(const ScoreFn& score_fn, const PoseOffset3& gt_offset,
                           const RandomPoseDistribution& dist, std::uint64_t seed);

struct RandomPoseDraw {
  std::vector<PoseOffset3> offsets;
  std::vector<double> log_q;
};

// Throws SamplingError if any density falls below 1e-300.
RandomPoseDraw draw_random_poses(const RandomPoseDistribution& dist, std::uint64_t seed);

// alpha weights the positive term only; negatives carry weight 1.
struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
};

// Binary focal loss, mean over cells, summed over the grids. Predictions
// must lie in (0, 1).
double focal_seg_loss(const std::vector<std::vector<double>>& pred,
                      const std::vector<std::vector<double>>& gt, const FocalParams& params);

// The same loss and its derivative, from a logit.
double focal_from_logit(double z, double y, const FocalParams& params);
double focal_from_logit_derivative(double z, double y, const FocalParams& params);

struct LossWeights {
  double rmse = 1.0;
  double pose_solver_kl = 1.0;
  double random_pose_kl = 1.0;
  double focal = 1.0;
};

struct LossConfig {
  LossWeights weights;
  SolverConfig solver;
  RandomPoseDistribution random_pose;  // level 0
  FocalParams focal;
  std::uint64_t seed = 0;
};

template <class T>
struct LossBreakdown {
  T rmse = T(0.0);
  T pose_solver_kl = T(0.0);
  T random_pose_kl = T(0.0);
  T focal = T(0.0);
  T total = T(0.0);
};

// Everything that is held constant during differentiation: per-level base
// poses, posterior means and covariances from a plain solve, random pose
// draws centered on those means, and the ground-truth semantic masks.
struct DetachedState {
  std::vector<Pose6> base;
  std::vector<PoseOffset3> mean;
  std::vector<Eigen::Matrix3d> sigma;
  std::vector<RandomPoseDraw> random;
  std::vector<std::array<SemanticMask, kNumSemanticTypes>> masks;
};

DetachedState detach(const Model<double>& model, const Frame& frame, const LossConfig& config,
                     std::uint64_t frame_seed);

// Each term is summed over solver levels. Level l scores its candidates
// around base[l]; the gt score is taken at relative_offset(base[l], gt).
template <class T>
LossBreakdown<T> total_loss(const Model<T>& model, const Frame& frame,
                            const DetachedState& state, const LossConfig& config);

struct LossAndGradient {
  LossBreakdown<double> loss;
  std::vector<double> gradient;  // flatten() order
};

// One recorded forward pass and reverse sweep.
LossAndGradient loss_and_gradient(const Model<double>& model, const Frame& frame,
                                  const DetachedState& state, const LossConfig& config);

struct GradCheckEntry {
  std::string tensor;
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // worst entry per tensor
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-3;

// Central differences with step h on every parameter of `model`.
GradCheckReport gradcheck(const Model<double>& model, const Frame& frame,
                          const LossConfig& config, double h = 1e-4);

struct TrainingConfig {
  LossConfig loss;
  double learning_rate = 0.01;
  int iterations = 200;
  double divergence_limit = 1e6;
};

struct TrainingRecord {
  int iteration = 0;
  LossBreakdown<double> loss;  // mean over frames
  double grad_norm = 0.0;
};

struct TrainingResult {
  Model<double> model;
  std::vector<TrainingRecord> log;
};

// Plain gradient descent on the mean loss over `frames`. Each frame's
// detached state is refreshed every iteration. Records are written to `log`
// as JSON lines when given. Throws DivergenceError once the loss exceeds the
// limit or turns non-finite.
TrainingResult train_loop(const Model<double>& initial, std::span<const Frame> frames,
                          const TrainingConfig& config, std::ostream* log = nullptr);

std::string training_record_json(const TrainingRecord& record);

}  // namespace vecloc

#endif  // VECLOC_TRAINING_HPP_
