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

#include "vecloc/pose_solver.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include "json.hpp"

#include "vecloc/errors.hpp"

namespace vecloc {
namespace {

constexpr double kMaxLinearYawRange = deg_to_rad(30.0);

// The score head with W1 folded into each element embedding:
// W1 (s (.) e_i) = (W1 diag(e_i)) s.
struct FoldedHead {
  int hidden = 0;
  int channels = 0;
  std::vector<double> folded;  // K x hidden x C
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;

  const double* row(int element, int r) const {
    return folded.data() +
           (static_cast<std::size_t>(element) * hidden + static_cast<std::size_t>(r)) *
               static_cast<std::size_t>(channels);
  }
};

FoldedHead fold_head(const ScoreHead<double>& head,
                     const std::vector<std::vector<double>>& embeddings, int channels) {
  if (head.l1.in() != channels || head.l2.out() != 1 || head.l2.in() != head.l1.out()) {
    throw ArgumentError("score head shape does not match the grid channels");
  }
  FoldedHead f;
  f.hidden = head.l1.out();
  f.channels = channels;
  f.folded.resize(embeddings.size() * static_cast<std::size_t>(f.hidden * channels));
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (static_cast<int>(embeddings[i].size()) != channels) {
      throw ArgumentError("embedding width does not match the grid channels");
    }
    for (int r = 0; r < f.hidden; ++r) {
      double* out = f.folded.data() + (i * f.hidden + static_cast<std::size_t>(r)) *
                                          static_cast<std::size_t>(channels);
      for (int c = 0; c < channels; ++c) {
        out[c] = head.l1.w(r, c) * embeddings[i][static_cast<std::size_t>(c)];
      }
    }
  }
  f.b1 = head.l1.b;
  f.w2.assign(head.l2.w.v.begin(), head.l2.w.v.end());
  f.b2 = head.l2.b[0];
  return f;
}

// Mean bilinear sample over the element's points.
void mean_sample(const BevGrid& grid, const ScoreGeometry& geometry,
                 const CandidateTransform& tf, int element, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const int begin = geometry.begin[static_cast<std::size_t>(element)];
  const int end = geometry.begin[static_cast<std::size_t>(element + 1)];
  const double w = 1.0 / (end - begin);
  for (int p = begin; p < end; ++p) {
    const Eigen::Vector2d g = tf.grid_point(geometry.rel[static_cast<std::size_t>(p)]);
    accumulate_bilinear(grid, bilinear_stencil(grid.spec, g.x(), g.y()), w, out);
  }
}

double score_one(const BevGrid& grid, const ScoreGeometry& geometry, const FoldedHead& head,
                 const PoseOffset3& offset, std::span<double> sbar) {
  const CandidateTransform tf(geometry, offset);
  const int K = geometry.elements();
  double total = 0.0;
  for (int i = 0; i < K; ++i) {
    mean_sample(grid, geometry, tf, i, sbar);
    double h = head.b2;
    for (int r = 0; r < head.hidden; ++r) {
      const double* row = head.row(i, r);
      double a = head.b1[static_cast<std::size_t>(r)];
      for (int c = 0; c < head.channels; ++c) a += row[c] * sbar[static_cast<std::size_t>(c)];
      h += head.w2[static_cast<std::size_t>(r)] * gelu(a);
    }
    total += h;
  }
  return total / K;
}

nlohmann::json pose_json(const Pose6& pose) {
  std::vector<double> R;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) R.push_back(pose.R(r, c));
  }
  return {{"t", {pose.t.x(), pose.t.y(), pose.t.z()}}, {"R", R}};
}

}  // namespace

SearchRange SolverConfig::range_at(int level) const {
  const double f = std::ldexp(1.0, -level);
  return {range.x * f, range.y * f, range.yaw * f};
}

SearchRange SolverConfig::step_at(int level) const {
  const double f = std::ldexp(1.0, -level);
  return {step.x * f, step.y * f, step.yaw * f};
}

void SolverConfig::validate() const {
  if (levels < 1 || levels > kPyramidLevels) {
    throw ValidationError(fmt::format("solver levels must be in [1, {}]", kPyramidLevels));
  }
  if (!(step.x > 0.0 && step.y > 0.0 && step.yaw > 0.0)) {
    throw ValidationError("solver steps must be positive");
  }
  if (!(range.yaw < kMaxLinearYawRange)) {
    throw ValidationError("yaw range must stay below 30 degrees for linear averaging");
  }
  try {
    candidate_axis_count(range.x, step.x);
    candidate_axis_count(range.y, step.y);
    candidate_axis_count(range.yaw, step.yaw);
  } catch (const ArgumentError& e) {
    throw ValidationError(e.what());
  }
}

ScoreGeometry ScoreGeometry::build(const Pose6& base, std::span<const MapElement> elements,
                                   const GridSpec& spec, const SegmentSampling& sampling) {
  ScoreGeometry g;
  g.spec = spec;
  g.Rt = base.R.transpose();
  g.yaw = base.yaw();
  const BevPlane plane = BevPlane::of(base);
  g.begin.push_back(0);
  for (const MapElement& e : elements) {
    for (const Eigen::Vector2d& p : densify(e, sampling)) {
      g.rel.push_back(plane.lift(p) - base.t);
    }
    g.begin.push_back(static_cast<int>(g.rel.size()));
  }
  return g;
}

CandidateTransform::CandidateTransform(const ScoreGeometry& geometry,
                                       const PoseOffset3& offset) {
  // p_L = Rt Rz(-dpsi) (q - Rz(yaw) (dx, dy, 0))
  const Eigen::Matrix3d A = geometry.Rt * rot_z(-offset.dpsi);
  const Eigen::Vector3d d = rot_z(geometry.yaw) * Eigen::Vector3d(offset.dx, offset.dy, 0.0);
  const Eigen::Vector3d b = A * d;
  a00 = A(0, 0);
  a01 = A(0, 1);
  a02 = A(0, 2);
  a10 = A(1, 0);
  a11 = A(1, 1);
  a12 = A(1, 2);
  b0 = b.x();
  b1 = b.y();
  inv_res = 1.0 / geometry.spec.resolution;
  h_min = geometry.spec.h_min;
  w_min = geometry.spec.w_min;
}

std::vector<double> score_candidates(const BevGrid& grid, const ScoreGeometry& geometry,
                                     const std::vector<std::vector<double>>& embeddings,
                                     const ScoreHead<double>& head,
                                     std::span<const PoseOffset3> candidates,
                                     bool parallel) {
  const int K = geometry.elements();
  if (K <= 0) throw ArgumentError("score_candidates: no map elements to average over");
  if (static_cast<int>(embeddings.size()) != K) {
    throw ArgumentError("score_candidates: one embedding per element");
  }
  if (!(grid.spec == geometry.spec)) {
    throw ArgumentError("score_candidates: grid and geometry disagree on the grid spec");
  }
  const FoldedHead folded = fold_head(head, embeddings, grid.channels);
  const std::int64_t N = static_cast<std::int64_t>(candidates.size());
  std::vector<double> scores(candidates.size());
  if (parallel) {
#pragma omp parallel
    {
      std::vector<double> sbar(static_cast<std::size_t>(grid.channels));
#pragma omp for schedule(static)
      for (std::int64_t n = 0; n < N; ++n) {
        scores[static_cast<std::size_t>(n)] =
            score_one(grid, geometry, folded, candidates[static_cast<std::size_t>(n)], sbar);
      }
    }
  } else {
    std::vector<double> sbar(static_cast<std::size_t>(grid.channels));
    for (std::int64_t n = 0; n < N; ++n) {
      scores[static_cast<std::size_t>(n)] =
          score_one(grid, geometry, folded, candidates[static_cast<std::size_t>(n)], sbar);
    }
  }
  return scores;
}

std::vector<double> score_candidates(const BevGrid& grid, std::span<const MapElement> elements,
                                     const std::vector<std::vector<double>>& embeddings,
                                     std::span<const PoseOffset3> candidates,
                                     const Pose6& base_pose, const ScoreHead<double>& head,
                                     const SegmentSampling& sampling) {
  return score_candidates(grid, ScoreGeometry::build(base_pose, elements, grid.spec, sampling),
                          embeddings, head, candidates);
}

ScoreGradients score_candidates_backward(const BevGrid& raw_grid, const Mat<double>& projection,
                                         const ScoreGeometry& geometry,
                                         const std::vector<std::vector<double>>& embeddings,
                                         const ScoreHead<double>& head,
                                         std::span<const PoseOffset3> candidates,
                                         std::span<const double> dscores) {
  const int K = geometry.elements();
  const int C = raw_grid.channels;
  const int H = head.l1.out();
  if (K <= 0) throw ArgumentError("score_candidates_backward: no map elements");
  if (projection.rows != C || projection.cols != C || head.l1.in() != C) {
    throw ArgumentError("score_candidates_backward: channel mismatch");
  }
  if (dscores.size() != candidates.size()) {
    throw ArgumentError("score_candidates_backward: one adjoint per candidate");
  }
  ScoreGradients g;
  g.embeddings.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(C), 0.0));
  g.projection = Mat<double>(C, C);
  g.w1 = Mat<double>(H, C);
  g.b1.assign(static_cast<std::size_t>(H), 0.0);
  g.w2.assign(static_cast<std::size_t>(H), 0.0);
  std::vector<double> sbar(static_cast<std::size_t>(C)), u(static_cast<std::size_t>(C)),
      x(static_cast<std::size_t>(C)), dx(static_cast<std::size_t>(C)), da(static_cast<std::size_t>(H));
  for (std::size_t n = 0; n < candidates.size(); ++n) {
    const double gs = dscores[n] / K;
    if (gs == 0.0) continue;
    const CandidateTransform tf(geometry, candidates[n]);
    for (int i = 0; i < K; ++i) {
      const std::vector<double>& e = embeddings[static_cast<std::size_t>(i)];
      mean_sample(raw_grid, geometry, tf, i, sbar);
      for (int r = 0; r < C; ++r) {
        u[static_cast<std::size_t>(r)] = dot(projection.row(r), std::span<const double>(sbar));
        x[static_cast<std::size_t>(r)] = u[static_cast<std::size_t>(r)] * e[static_cast<std::size_t>(r)];
      }
      g.b2 += gs;
      for (int r = 0; r < H; ++r) {
        const double a = affine(head.l1.b[static_cast<std::size_t>(r)], head.l1.w.row(r),
                                std::span<const double>(x));
        g.w2[static_cast<std::size_t>(r)] += gs * gelu(a);
        da[static_cast<std::size_t>(r)] = gs * head.l2.w.v[static_cast<std::size_t>(r)] * gelu_derivative(a);
        g.b1[static_cast<std::size_t>(r)] += da[static_cast<std::size_t>(r)];
        auto gw = g.w1.row(r);
        for (int c = 0; c < C; ++c) gw[static_cast<std::size_t>(c)] += da[static_cast<std::size_t>(r)] * x[static_cast<std::size_t>(c)];
      }
      std::fill(dx.begin(), dx.end(), 0.0);
      for (int r = 0; r < H; ++r) {
        const auto w = head.l1.w.row(r);
        for (int c = 0; c < C; ++c) dx[static_cast<std::size_t>(c)] += w[static_cast<std::size_t>(c)] * da[static_cast<std::size_t>(r)];
      }
      auto& ge = g.embeddings[static_cast<std::size_t>(i)];
      for (int r = 0; r < C; ++r) {
        const std::size_t s = static_cast<std::size_t>(r);
        ge[s] += dx[s] * u[s];
        const double du = dx[s] * e[s];
        auto gp = g.projection.row(r);
        for (int c = 0; c < C; ++c) gp[static_cast<std::size_t>(c)] += du * sbar[static_cast<std::size_t>(c)];
      }
    }
  }
  return g;
}

Posterior posterior(std::span<const PoseOffset3> offsets, std::span<const double> scores) {
  if (offsets.size() != scores.size() || scores.empty()) {
    throw ArgumentError("posterior: need one score per offset and at least one");
  }
  double shift = scores[0];
  for (double s : scores) {
    if (!std::isfinite(s)) throw ArgumentError("posterior: non-finite score");
    shift = std::max(shift, s);
  }
  Posterior post;
  post.offsets.assign(offsets.begin(), offsets.end());
  post.probs.reserve(scores.size());
  double total = 0.0;
  for (double s : scores) {
    post.probs.push_back(std::exp(s - shift));
    total += post.probs.back();
  }
  for (double& p : post.probs) p /= total;
  return post;
}

PoseOffset3 expected_offset(const Posterior& post) {
  PoseOffset3 d;
  for (std::size_t n = 0; n < post.probs.size(); ++n) {
    d.dx += post.probs[n] * post.offsets[n].dx;
    d.dy += post.probs[n] * post.offsets[n].dy;
    d.dpsi += post.probs[n] * post.offsets[n].dpsi;
  }
  return d;
}

Eigen::Matrix3d offset_covariance(const Posterior& post, const PoseOffset3& delta) {
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
  const Eigen::Vector3d mean = as_vector(delta);
  for (std::size_t n = 0; n < post.probs.size(); ++n) {
    const Eigen::Vector3d e = as_vector(post.offsets[n]) - mean;
    sigma.noalias() += post.probs[n] * (e * e.transpose());
  }
  return 0.5 * (sigma + sigma.transpose());
}

SolverResult solve_multilevel(const BevPyramid& pyramid, std::span<const MapElement> elements,
                              const std::vector<std::vector<double>>& embeddings,
                              const Pose6& init_pose, const SolverConfig& config,
                              const Model<double>& model) {
  config.validate();
  if (elements.empty()) throw ArgumentError("solve_multilevel: no map elements");
  SolverResult result;
  Pose6 estimate = init_pose;
  for (int l = 0; l < config.levels; ++l) {
    const std::size_t s = static_cast<std::size_t>(l);
    const BevGrid& raw = pyramid.layers[s];
    const BevGrid grid = unify_channels(raw, model.params.bev_proj[s]);
    std::vector<std::vector<double>> level_emb;
    level_emb.reserve(embeddings.size());
    for (const auto& e : embeddings) {
      level_emb.push_back(level_embedding(model.params, l, std::span<const double>(e)));
    }
    LevelResult level;
    level.level = l;
    level.base_pose = estimate;
    level.range = config.range_at(l);
    level.step = config.step_at(l);
    const std::vector<PoseOffset3> candidates =
        sample_candidate_offsets(level.range, level.step);
    const ScoreGeometry geometry =
        ScoreGeometry::build(estimate, elements, raw.spec, config.sampling);
    level.scores = score_candidates(grid, geometry, level_emb, model.params.heads[s],
                                    candidates, config.parallel);
    level.posterior = posterior(candidates, level.scores);
    level.delta = expected_offset(level.posterior);
    level.sigma = offset_covariance(level.posterior, level.delta);
    estimate = compose(estimate, level.delta);
    result.delta.dx += level.delta.dx;
    result.delta.dy += level.delta.dy;
    result.delta.dpsi += level.delta.dpsi;
    result.sigma.push_back(level.sigma);
    result.levels.push_back(std::move(level));
  }
  result.final_pose = estimate;
  return result;
}

void write_solver_dump(const SolverResult& result, const std::filesystem::path& path) {
  nlohmann::json levels = nlohmann::json::array();
  for (const LevelResult& level : result.levels) {
    auto axis = [](const char* name, double range, double step) {
      return nlohmann::json{{"name", name},
                            {"min", -range},
                            {"step", step},
                            {"count", candidate_axis_count(range, step)}};
    };
    std::vector<double> sigma(level.sigma.data(), level.sigma.data() + 9);
    levels.push_back({{"level", level.level},
                      {"base_pose", pose_json(level.base_pose)},
                      {"axes",
                       {axis("x", level.range.x, level.step.x),
                        axis("y", level.range.y, level.step.y),
                        axis("yaw", level.range.yaw, level.step.yaw)}},
                      {"scores", level.scores},
                      {"probs", level.posterior.probs},
                      {"delta", {level.delta.dx, level.delta.dy, level.delta.dpsi}},
                      {"sigma", sigma}});
  }
  const nlohmann::json doc = {
      {"format", "vecloc-solver-dump"},
      {"version", 1},
      {"delta", {result.delta.dx, result.delta.dy, result.delta.dpsi}},
      {"final_pose", pose_json(result.final_pose)},
      {"levels", levels}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write solver dump {}", path.string()));
  out << doc.dump() << "\n";
}

}  // namespace vecloc
