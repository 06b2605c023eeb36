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

#include "vecloc/training.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <ostream>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include "json.hpp"

#include "vecloc/errors.hpp"

namespace vecloc {

using ad::Var;

namespace {

constexpr double kMinDensity = 1e-300;

Mat<double> values(const Mat<Var>& m) {
  Mat<double> out(m.rows, m.cols);
  for (std::size_t k = 0; k < m.v.size(); ++k) out.v[k] = m.v[k].val;
  return out;
}

std::vector<double> values(const std::vector<Var>& v) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const Var& e : v) out.push_back(e.val);
  return out;
}

template <class T>
ScoreHead<double> head_values(const ScoreHead<T>& head) {
  ScoreHead<double> h;
  h.l1.w = values(head.l1.w);
  h.l1.b = values(head.l1.b);
  h.l2.w = values(head.l2.w);
  h.l2.b = values(head.l2.b);
  return h;
}

template <class T>
std::vector<std::vector<double>> rows_values(const std::vector<std::vector<T>>& rows) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(values(r));
  return out;
}

void add_adjoint(const Var& v, double g, std::span<double> adjoints) {
  if (v.recorded()) adjoints[static_cast<std::size_t>(v.idx)] += g;
}

void add_adjoints(std::span<const Var> vars, std::span<const double> g,
                  std::span<double> adjoints) {
  for (std::size_t k = 0; k < vars.size(); ++k) add_adjoint(vars[k], g[k], adjoints);
}

// Level scores with the BEV projection applied to the raw layer.
std::vector<double> level_scores(const Model<double>& model, int level,
                                 const std::vector<std::vector<double>>& emb,
                                 const BevGrid& raw,
                                 const std::shared_ptr<const ScoreGeometry>& geometry,
                                 std::vector<PoseOffset3> candidates, bool parallel) {
  const std::size_t s = static_cast<std::size_t>(level);
  const BevGrid grid = unify_channels(raw, model.params.bev_proj[s]);
  return score_candidates(grid, *geometry, emb, model.params.heads[s], candidates, parallel);
}

std::vector<Var> level_scores(const Model<Var>& model, int level,
                              const std::vector<std::vector<Var>>& emb, const BevGrid& raw,
                              const std::shared_ptr<const ScoreGeometry>& geometry,
                              std::vector<PoseOffset3> candidates, bool parallel) {
  const std::size_t s = static_cast<std::size_t>(level);
  const Mat<Var>& P = model.params.bev_proj[s];
  const ScoreHead<Var>& head = model.params.heads[s];
  const Mat<double> Pv = values(P);
  const ScoreHead<double> hv = head_values(head);
  const std::vector<std::vector<double>> ev = rows_values(emb);
  const BevGrid grid = unify_channels(raw, Pv);
  const std::vector<double> out =
      score_candidates(grid, *geometry, ev, hv, candidates, parallel);
  // The raw layer belongs to the frame, which outlives the reverse sweep.
  const BevGrid* raw_ptr = &raw;
  auto backward = [=](std::span<const double> dscores, std::span<double> adjoints) {
    const ScoreGradients g =
        score_candidates_backward(*raw_ptr, Pv, *geometry, ev, hv, candidates, dscores);
    for (std::size_t i = 0; i < emb.size(); ++i) {
      add_adjoints(emb[i], g.embeddings[i], adjoints);
    }
    add_adjoints(P.v, g.projection.v, adjoints);
    add_adjoints(head.l1.w.v, g.w1.v, adjoints);
    add_adjoints(head.l1.b, g.b1, adjoints);
    add_adjoints(head.l2.w.v, g.w2, adjoints);
    add_adjoint(head.l2.b[0], g.b2, adjoints);
  };
  return ad::Tape::active().fused(out, backward);
}

// Focal loss of sigmoid(F' . E'_j) against the masks, F' = P F.
struct FocalForward {
  double loss = 0.0;
  Mat<double> dP;
  std::vector<std::vector<double>> dE;
};

FocalForward focal_forward(const BevGrid& raw, const Mat<double>& P,
                           const std::vector<std::vector<double>>& E,
                           const std::array<SemanticMask, kNumSemanticTypes>& masks,
                           const FocalParams& params, double adjoint) {
  const BevGrid unified = unify_channels(raw, P);
  const std::size_t cells = static_cast<std::size_t>(raw.spec.H) * raw.spec.W;
  const std::size_t C = static_cast<std::size_t>(unified.channels);
  const std::size_t Ci = static_cast<std::size_t>(raw.channels);
  const double inv_cells = 1.0 / static_cast<double>(cells);
  FocalForward f;
  const bool backward = adjoint != 0.0;
  if (backward) {
    f.dP = Mat<double>(P.rows, P.cols);
    f.dE.assign(E.size(), std::vector<double>(C, 0.0));
  }
  std::vector<double> dF(C);
  for (std::size_t c = 0; c < cells; ++c) {
    const std::span<const double> Fc(unified.data.data() + c * C, C);
    std::fill(dF.begin(), dF.end(), 0.0);
    for (std::size_t j = 0; j < E.size(); ++j) {
      if (masks[j].cells.size() != cells) {
        throw ArgumentError("focal loss: mask and grid shapes differ");
      }
      const double z = dot(Fc, std::span<const double>(E[j]));
      const double y = masks[j].cells[c] ? 1.0 : 0.0;
      f.loss += focal_from_logit(z, y, params) * inv_cells;
      if (!backward) continue;
      const double dz = adjoint * inv_cells * focal_from_logit_derivative(z, y, params);
      for (std::size_t k = 0; k < C; ++k) {
        f.dE[j][k] += dz * Fc[k];
        dF[k] += dz * E[j][k];
      }
    }
    if (!backward) continue;
    const std::span<const double> Fr(raw.data.data() + c * Ci, Ci);
    for (std::size_t r = 0; r < C; ++r) {
      auto row = f.dP.row(static_cast<int>(r));
      for (std::size_t k = 0; k < Ci; ++k) row[k] += dF[r] * Fr[k];
    }
  }
  return f;
}

template <class T>
std::vector<std::vector<T>> level_table(const Model<T>& model, int level) {
  std::vector<std::vector<T>> out;
  for (int j = 0; j < model.table.E.rows; ++j) {
    out.push_back(level_embedding(model.params, level, model.table.E.row(j)));
  }
  return out;
}

double level_focal(const Model<double>& model, int level, const BevGrid& raw,
                   const std::array<SemanticMask, kNumSemanticTypes>& masks,
                   const FocalParams& params) {
  return focal_forward(raw, model.params.bev_proj[static_cast<std::size_t>(level)],
                       level_table(model, level), masks, params, 0.0)
      .loss;
}

Var level_focal(const Model<Var>& model, int level, const BevGrid& raw,
                const std::array<SemanticMask, kNumSemanticTypes>& masks,
                const FocalParams& params) {
  const Mat<Var>& P = model.params.bev_proj[static_cast<std::size_t>(level)];
  const std::vector<std::vector<Var>> E = level_table(model, level);
  const Mat<double> Pv = values(P);
  const std::vector<std::vector<double>> Ev = rows_values(E);
  const double loss = focal_forward(raw, Pv, Ev, masks, params, 0.0).loss;
  const BevGrid* raw_ptr = &raw;
  const auto* masks_ptr = &masks;
  auto backward = [=](std::span<const double> adj, std::span<double> adjoints) {
    const FocalForward f = focal_forward(*raw_ptr, Pv, Ev, *masks_ptr, params, adj[0]);
    add_adjoints(P.v, f.dP.v, adjoints);
    for (std::size_t j = 0; j < E.size(); ++j) add_adjoints(E[j], f.dE[j], adjoints);
  };
  const double v[1] = {loss};
  return ad::Tape::active().fused(v, backward)[0];
}

double log_t2_density(const Eigen::Vector2d& x, const Eigen::Matrix2d& scale, double nu) {
  const double d2 = x.dot(scale.inverse() * x);
  return std::lgamma(0.5 * (nu + 2.0)) - std::lgamma(0.5 * nu) - std::log(nu * std::numbers::pi) -
         0.5 * std::log(scale.determinant()) - 0.5 * (nu + 2.0) * std::log1p(d2 / nu);
}

// Best and Fisher (1979).
double sample_von_mises(double kappa, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double z = std::cos(std::numbers::pi * U(rng));
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    const double u2 = U(rng);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double theta = std::acos(std::clamp(f, -1.0, 1.0));
      return U(rng) < 0.5 ? -theta : theta;
    }
  }
}

template <class T>
std::array<T, 3> expected(std::span<const T> probs, std::span<const PoseOffset3> offsets) {
  std::vector<T> cx, cy, cz;
  for (const PoseOffset3& o : offsets) {
    cx.push_back(T(o.dx));
    cy.push_back(T(o.dy));
    cz.push_back(T(o.dpsi));
  }
  return {dot(probs, std::span<const T>(cx)), dot(probs, std::span<const T>(cy)),
          dot(probs, std::span<const T>(cz))};
}

}  // namespace

void RandomPoseDistribution::validate() const {
  if (!(nu > 0.0 && kappa > 0.0 && yaw_range > 0.0 && samples > 0)) {
    throw ValidationError("random pose distribution: nu, kappa, yaw range and samples must be positive");
  }
  if (!(uniform_weight >= 0.0 && uniform_weight <= 1.0)) {
    throw ValidationError("random pose distribution: uniform weight must be in [0, 1]");
  }
  if (!(scale.determinant() > 0.0 && scale(0, 0) > 0.0) ||
      std::abs(scale(0, 1) - scale(1, 0)) > 1e-12) {
    throw ValidationError("random pose distribution: scale must be symmetric positive definite");
  }
}

double RandomPoseDistribution::density(const PoseOffset3& o) const {
  const double xy = std::exp(log_t2_density({o.dx, o.dy}, scale, nu));
  const double psi = wrap_yaw(o.dpsi);
  const double vm =
      std::exp(kappa * (std::cos(psi) - 1.0)) /
      (2.0 * std::numbers::pi * std::cyl_bessel_i(0.0, kappa) * std::exp(-kappa));
  const double uni = std::abs(psi) <= yaw_range ? 1.0 / (2.0 * yaw_range) : 0.0;
  return xy * ((1.0 - uniform_weight) * vm + uniform_weight * uni);
}

PoseOffset3 RandomPoseDistribution::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> N(0.0, 1.0);
  std::chi_squared_distribution<double> chi2(nu);
  const Eigen::Matrix2d L = scale.llt().matrixL();
  const Eigen::Vector2d z = L * Eigen::Vector2d(N(rng), N(rng));
  const Eigen::Vector2d xy = z * std::sqrt(nu / chi2(rng));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double psi = U(rng) < uniform_weight
                         ? std::uniform_real_distribution<double>(-yaw_range, yaw_range)(rng)
                         : sample_von_mises(kappa, rng);
  return {xy.x(), xy.y(), psi};
}

RandomPoseDistribution RandomPoseDistribution::at_level(int level) const {
  RandomPoseDistribution d = *this;
  const double f = std::ldexp(1.0, -level);
  d.scale *= f * f;
  d.kappa /= f * f;
  d.yaw_range *= f;
  return d;
}

RmseWeights RmseWeights::of(const Eigen::Matrix3d& sigma) {
  if (!sigma.allFinite()) throw ArgumentError("rmse loss: non-finite covariance");
  const double tol = 1e-9 * std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > tol) {
    throw ArgumentError("rmse loss: covariance is not symmetric");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sigma);
  const Eigen::Vector3d s = eig.eigenvalues();
  if (s.minCoeff() < -tol) throw ArgumentError("rmse loss: covariance is not PSD");
  const Eigen::Vector3d inv = s.cwiseMax(1e-6).cwiseInverse();
  return {eig.eigenvectors().transpose(), inv / inv.sum()};
}

template <class T>
T rmse_loss(const std::array<T, 3>& delta, const PoseOffset3& delta_gt, const RmseWeights& w) {
  using std::sqrt;
  const T e[3] = {delta[0] - delta_gt.dx, delta[1] - delta_gt.dy, delta[2] - delta_gt.dpsi};
  T total(0.0);
  for (int k = 0; k < 3; ++k) {
    const T v = w.Ut(k, 0) * e[0] + w.Ut(k, 1) * e[1] + w.Ut(k, 2) * e[2];
    total = total + w.lambda[k] * v * v;
  }
  // The norm has no derivative at zero; report the zero subgradient.
  if (value_of(total) == 0.0) return total;
  return sqrt(total);
}

double rmse_loss(const PoseOffset3& delta, const PoseOffset3& delta_gt,
                 const Eigen::Matrix3d& sigma) {
  return rmse_loss<double>({delta.dx, delta.dy, delta.dpsi}, delta_gt, RmseWeights::of(sigma));
}

namespace {

double softplus_of(double x) { return softplus(x); }

Var softplus_of(const Var& x) {
  if (!x.recorded()) return Var(softplus(x.val));
  return ad::Tape::active().node(softplus(x.val), x, sigmoid(x.val));
}

}  // namespace

// log(1 + sum_n exp(S_n - S_gt)), which keeps full precision as the gt
// score dominates.
template <class T>
T pose_solver_kl_loss(std::span<const T> scores, const T& gt_score) {
  std::vector<T> rel;
  rel.reserve(scores.size());
  for (const T& s : scores) rel.push_back(s - gt_score);
  return softplus_of(logsumexp(std::span<const T>(rel)));
}

template <class T>
T random_pose_kl_loss(std::span<const T> sample_scores, std::span<const double> log_q,
                      const T& gt_score) {
  if (sample_scores.size() != log_q.size() || sample_scores.empty()) {
    throw ArgumentError("random pose loss: one density per sample");
  }
  std::vector<T> terms;
  terms.reserve(sample_scores.size());
  for (std::size_t j = 0; j < sample_scores.size(); ++j) {
    terms.push_back(sample_scores[j] - log_q[j]);
  }
  return logsumexp(std::span<const T>(terms)) -
         std::log(static_cast<double>(sample_scores.size())) - gt_score;
}

RandomPoseDraw draw_random_poses(const RandomPoseDistribution& dist, std::uint64_t seed) {
  dist.validate();
  std::mt19937_64 rng = split_rng(seed, 0);
  RandomPoseDraw draw;
  for (int j = 0; j < dist.samples; ++j) {
    const PoseOffset3 o = dist.sample(rng);
    const double q = dist.density(o);
    if (!(q >= kMinDensity)) {
      throw SamplingError(fmt::format("random pose density {:.3e} below {:.0e}", q, kMinDensity));
    }
    draw.offsets.push_back(o);
    draw.log_q.push_back(std::log(q));
  }
  return draw;
}

double random_pose_kl_loss(const ScoreFn& score_fn, const PoseOffset3& gt_offset,
                           const RandomPoseDistribution& dist, std::uint64_t seed) {
  const RandomPoseDraw draw = draw_random_poses(dist, seed);
  std::vector<PoseOffset3> all = draw.offsets;
  all.push_back(gt_offset);
  const std::vector<double> scores = score_fn(all);
  if (scores.size() != all.size()) throw ArgumentError("random pose loss: score count mismatch");
  return random_pose_kl_loss<double>(std::span<const double>(scores.data(), draw.offsets.size()),
                                     draw.log_q, scores.back());
}

double focal_from_logit(double z, double y, const FocalParams& params) {
  const double log_p = -softplus(-z);
  const double log_1mp = -softplus(z);
  const double p = sigmoid(z);
  return -params.alpha * y * std::pow(1.0 - p, params.gamma) * log_p -
         (1.0 - y) * std::pow(p, params.gamma) * log_1mp;
}

double focal_from_logit_derivative(double z, double y, const FocalParams& params) {
  const double log_p = -softplus(-z);
  const double log_1mp = -softplus(z);
  const double p = sigmoid(z);
  const double q = 1.0 - p;
  const double g = params.gamma;
  const double pos = params.alpha * (g * p * std::pow(q, g) * log_p - std::pow(q, g + 1.0));
  const double neg = -(g * std::pow(p, g) * q * log_1mp - std::pow(p, g + 1.0));
  return y * pos + (1.0 - y) * neg;
}

double focal_seg_loss(const std::vector<std::vector<double>>& pred,
                      const std::vector<std::vector<double>>& gt, const FocalParams& params) {
  if (pred.size() != gt.size()) throw ArgumentError("focal loss: grid count mismatch");
  double total = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (pred[j].size() != gt[j].size() || pred[j].empty()) {
      throw ArgumentError("focal loss: grid shape mismatch");
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < pred[j].size(); ++c) {
      const double p = pred[j][c];
      const double y = gt[j][c];
      if (!(p > 0.0 && p < 1.0)) throw ArgumentError("focal loss: prediction outside (0, 1)");
      sum += -params.alpha * y * std::pow(1.0 - p, params.gamma) * std::log(p) -
             (1.0 - y) * std::pow(p, params.gamma) * std::log1p(-p);
    }
    total += sum / static_cast<double>(pred[j].size());
  }
  return total;
}

DetachedState detach(const Model<double>& model, const Frame& frame, const LossConfig& config,
                     std::uint64_t frame_seed) {
  const std::vector<std::vector<double>> emb =
      decode(model, frame.elements, frame.init_pose, frame.pyramid.layers[0]);
  SolverConfig solver = config.solver;
  const SolverResult solved =
      solve_multilevel(frame.pyramid, frame.elements, emb, frame.init_pose, solver, model);
  DetachedState state;
  for (int l = 0; l < solver.levels; ++l) {
    const LevelResult& level = solved.levels[static_cast<std::size_t>(l)];
    state.base.push_back(level.base_pose);
    state.mean.push_back(level.delta);
    state.sigma.push_back(level.sigma);
    // q is a proposal around the level's estimate, so its samples reach the
    // score peak once the matcher localizes.
    RandomPoseDraw draw = draw_random_poses(config.random_pose.at_level(l),
                                            split_rng(frame_seed, static_cast<std::uint64_t>(l))());
    for (PoseOffset3& o : draw.offsets) {
      o = {o.dx + level.delta.dx, o.dy + level.delta.dy, o.dpsi + level.delta.dpsi};
    }
    state.random.push_back(std::move(draw));
    state.masks.push_back(rasterize_all_types(frame.elements, frame.gt_pose,
                                              frame.pyramid.layers[static_cast<std::size_t>(l)].spec));
  }
  return state;
}

template <class T>
LossBreakdown<T> total_loss(const Model<T>& model, const Frame& frame,
                            const DetachedState& state, const LossConfig& config) {
  const LossWeights& w = config.weights;
  LossBreakdown<T> out;
  const bool need_scores = w.rmse != 0.0 || w.pose_solver_kl != 0.0 || w.random_pose_kl != 0.0;
  std::vector<std::vector<T>> emb;
  if (need_scores) {
    emb = decode(model, prepare_decoder_inputs(frame.elements, frame.init_pose,
                                               frame.pyramid.layers[0]));
  }
  const int levels = static_cast<int>(state.base.size());
  for (int l = 0; l < levels; ++l) {
    const std::size_t s = static_cast<std::size_t>(l);
    const BevGrid& raw = frame.pyramid.layers[s];
    if (need_scores) {
      std::vector<std::vector<T>> emb_l;
      for (const auto& e : emb) emb_l.push_back(level_embedding(model.params, l, std::span<const T>(e)));
      const std::vector<PoseOffset3> candidates =
          sample_candidate_offsets(config.solver.range_at(l), config.solver.step_at(l));
      const PoseOffset3 gt = relative_offset(state.base[s], frame.gt_pose);
      std::vector<PoseOffset3> all = candidates;
      all.push_back(gt);
      all.insert(all.end(), state.random[s].offsets.begin(), state.random[s].offsets.end());
      const auto geometry = std::make_shared<const ScoreGeometry>(
          ScoreGeometry::build(state.base[s], frame.elements, raw.spec, config.solver.sampling));
      const std::vector<T> scores =
          level_scores(model, l, emb_l, raw, geometry, all, config.solver.parallel);
      const std::span<const T> cand_scores(scores.data(), candidates.size());
      const T& gt_score = scores[candidates.size()];
      const std::span<const T> random_scores(scores.data() + candidates.size() + 1,
                                             state.random[s].offsets.size());
      if (w.rmse != 0.0) {
        const std::vector<T> probs = softmax(cand_scores);
        const std::array<T, 3> delta =
            expected(std::span<const T>(probs), std::span<const PoseOffset3>(candidates));
        out.rmse = out.rmse + rmse_loss(delta, gt, RmseWeights::of(state.sigma[s]));
      }
      if (w.pose_solver_kl != 0.0) {
        out.pose_solver_kl = out.pose_solver_kl + pose_solver_kl_loss(cand_scores, gt_score);
      }
      if (w.random_pose_kl != 0.0) {
        out.random_pose_kl = out.random_pose_kl +
                             random_pose_kl_loss(random_scores, state.random[s].log_q, gt_score);
      }
    }
    if (w.focal != 0.0) {
      out.focal = out.focal + level_focal(model, l, raw, state.masks[s], config.focal);
    }
  }
  out.total = w.rmse * out.rmse + w.pose_solver_kl * out.pose_solver_kl +
              w.random_pose_kl * out.random_pose_kl + w.focal * out.focal;
  return out;
}

LossAndGradient loss_and_gradient(const Model<double>& model, const Frame& frame,
                                  const DetachedState& state, const LossConfig& config) {
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  const Model<Var> lifted = lift(model, tape);
  const LossBreakdown<Var> loss = total_loss(lifted, frame, state, config);
  LossAndGradient out;
  out.loss = {loss.rmse.val, loss.pose_solver_kl.val, loss.random_pose_kl.val, loss.focal.val,
              loss.total.val};
  if (loss.total.recorded()) {
    out.gradient = gradient_of(lifted, tape.gradient(loss.total));
  } else {
    out.gradient.assign(parameter_count(model), 0.0);
  }
  return out;
}

GradCheckReport gradcheck(const Model<double>& model, const Frame& frame,
                          const LossConfig& config, double h) {
  const DetachedState state = detach(model, frame, config, config.seed);
  const std::vector<double> analytic = loss_and_gradient(model, frame, state, config).gradient;
  std::vector<double> flat = flatten(model);
  Model<double> probe = model;
  auto loss_at = [&](std::size_t k, double v) {
    const double saved = flat[k];
    flat[k] = v;
    assign(probe, flat);
    flat[k] = saved;
    return total_loss(probe, frame, state, config).total;
  };
  GradCheckReport report;
  std::size_t k = 0;
  visit_tensors(model, [&](const std::string& name, const auto& vals, const std::vector<int>&) {
    GradCheckEntry worst{name, 0, 0.0, 0.0, -1.0};
    for (std::size_t i = 0; i < vals.size(); ++i, ++k) {
      const double numeric = (loss_at(k, flat[k] + h) - loss_at(k, flat[k] - h)) / (2.0 * h);
      const double a = analytic[k];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      if (rel > worst.rel_error) worst = {name, static_cast<int>(i), a, numeric, rel};
      ++report.checked;
    }
    if (!vals.empty()) {
      report.max_rel_error = std::max(report.max_rel_error, worst.rel_error);
      report.entries.push_back(worst);
    }
  });
  return report;
}

std::string training_record_json(const TrainingRecord& record) {
  const nlohmann::json j = {{"iteration", record.iteration},
                            {"rmse", record.loss.rmse},
                            {"pose_solver_kl", record.loss.pose_solver_kl},
                            {"random_pose_kl", record.loss.random_pose_kl},
                            {"focal", record.loss.focal},
                            {"total", record.loss.total},
                            {"grad_norm", record.grad_norm}};
  return j.dump();
}

TrainingResult train_loop(const Model<double>& initial, std::span<const Frame> frames,
                          const TrainingConfig& config, std::ostream* log) {
  if (frames.empty()) throw ArgumentError("train_loop: no frames");
  if (!(config.learning_rate >= 0.0) || config.iterations < 0) {
    throw ValidationError("train_loop: learning rate and iterations must be nonnegative");
  }
  TrainingResult result{initial, {}};
  std::vector<double> flat = flatten(initial);
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (int it = 0; it < config.iterations; ++it) {
    TrainingRecord record;
    record.iteration = it;
    std::vector<double> grad(flat.size(), 0.0);
    for (std::size_t f = 0; f < frames.size(); ++f) {
      // Random draws depend on the frame only, so a zero rate keeps the loss fixed.
      DetachedState state;
      try {
        state = detach(result.model, frames[f], config.loss, split_rng(config.loss.seed, f)());
      } catch (const ArgumentError& e) {
        throw DivergenceError(fmt::format("training diverged at iteration {}: {}", it, e.what()));
      }
      const LossAndGradient lg = loss_and_gradient(result.model, frames[f], state, config.loss);
      record.loss.rmse += lg.loss.rmse * inv;
      record.loss.pose_solver_kl += lg.loss.pose_solver_kl * inv;
      record.loss.random_pose_kl += lg.loss.random_pose_kl * inv;
      record.loss.focal += lg.loss.focal * inv;
      record.loss.total += lg.loss.total * inv;
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += lg.gradient[k] * inv;
    }
    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    record.grad_norm = std::sqrt(norm2);
    if (log != nullptr) *log << training_record_json(record) << "\n";
    result.log.push_back(record);
    if (!std::isfinite(record.loss.total) || std::abs(record.loss.total) > config.divergence_limit ||
        !std::isfinite(record.grad_norm)) {
      throw DivergenceError(fmt::format(
          "training diverged at iteration {}: total loss {:.6g}, gradient norm {:.6g}", it,
          record.loss.total, record.grad_norm));
    }
    for (std::size_t k = 0; k < flat.size(); ++k) flat[k] -= config.learning_rate * grad[k];
    assign(result.model, flat);
  }
  return result;
}

template double rmse_loss<double>(const std::array<double, 3>&, const PoseOffset3&,
                                  const RmseWeights&);
template Var rmse_loss<Var>(const std::array<Var, 3>&, const PoseOffset3&, const RmseWeights&);
template double pose_solver_kl_loss<double>(std::span<const double>, const double&);
template Var pose_solver_kl_loss<Var>(std::span<const Var>, const Var&);
template double random_pose_kl_loss<double>(std::span<const double>, std::span<const double>,
                                            const double&);
template Var random_pose_kl_loss<Var>(std::span<const Var>, std::span<const double>,
                                      const Var&);
template LossBreakdown<double> total_loss<double>(const Model<double>&, const Frame&,
                                                  const DetachedState&, const LossConfig&);
template LossBreakdown<Var> total_loss<Var>(const Model<Var>&, const Frame&,
                                            const DetachedState&, const LossConfig&);

}  // namespace vecloc
