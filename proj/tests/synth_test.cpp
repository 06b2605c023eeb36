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

#include "vecloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "gtest/gtest.h"
#include "support/oracles.hpp"
#include "vecloc/errors.hpp"
#include "vecloc/pose_solver.hpp"

namespace vecloc {
namespace {

using oracle::uniform;

std::map<SemanticType, int> CountByType(const VectorMap& map) {
  std::map<SemanticType, int> n;
  for (const MapElement& e : map.elements) ++n[e.sem];
  return n;
}

const Model<double>& Frozen() {
  static const Model<double> m = oracle_model(MatcherDims{}, 7, {100, 100, 20});
  return m;
}

const SignatureSet& Signatures() {
  static const SignatureSet s = oracle_signatures(Frozen());
  return s;
}

int Nonzero(const BevGrid& g) {
  int n = 0;
  for (int c = 0; c < g.spec.H * g.spec.W; ++c) {
    for (int k = 0; k < g.channels; ++k) {
      if (g.data[static_cast<std::size_t>(c * g.channels + k)] != 0.0) {
        ++n;
        break;
      }
    }
  }
  return n;
}

TEST(SceneTest, Deterministic) {
  SceneSpec spec;
  spec.seed = 42;
  spec.road_length = 300;
  const Scene a = generate_scene(spec), b = generate_scene(spec);
  EXPECT_EQ(serialize_map(a.map), serialize_map(b.map));
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  spec.seed = 43;
  EXPECT_NE(serialize_map(generate_scene(spec).map), serialize_map(a.map));
}

TEST(SceneTest, CountsMatchDensities) {
  SceneSpec spec;
  spec.road_length = 1000;
  std::map<SemanticType, double> mean;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    spec.seed = seed;
    for (const auto& [type, n] : CountByType(generate_scene(spec).map)) mean[type] += n / 10.0;
  }
  const double km = spec.road_length / 1000.0;
  EXPECT_NEAR(mean[SemanticType::kPole], spec.poles_per_km * km, 0.1 * spec.poles_per_km * km);
  EXPECT_NEAR(mean[SemanticType::kTrafficSign], spec.signs_per_km * km, 0.1 * spec.signs_per_km * km);
  // A crossing is drawn as its four-segment outline.
  EXPECT_NEAR(mean[SemanticType::kPedestrianCrossing] / 4.0, spec.crossings_per_km * km, 0.1 * spec.crossings_per_km * km);
  EXPECT_NEAR(mean[SemanticType::kRoadMarking], spec.markings_per_km * km, 0.1 * spec.markings_per_km * km);
  // Surfels pass the quality filter after placement, so only a bound.
  EXPECT_LE(mean[SemanticType::kSurfel], spec.surfels_per_km * km * 1.1);
  EXPECT_GT(mean[SemanticType::kSurfel], 0.0);
}

TEST(SceneTest, ZeroDensitiesLeaveLanesAndBoundaries) {
  SceneSpec spec;
  spec.road_length = 300;
  spec.poles_per_km = spec.signs_per_km = spec.surfels_per_km = spec.crossings_per_km = spec.markings_per_km = 0;
  const auto n = CountByType(generate_scene(spec).map);
  for (const auto& [type, count] : n) {
    EXPECT_TRUE(type == SemanticType::kLaneLine || type == SemanticType::kRoadBoundary) << to_string(type);
  }
  EXPECT_GT(n.at(SemanticType::kLaneLine), 0);
  EXPECT_GT(n.at(SemanticType::kRoadBoundary), 0);
}

TEST(SplitRngTest, Streams) {
  auto a = split_rng(5, 0), b = split_rng(5, 0), c = split_rng(5, 1);
  EXPECT_EQ(a(), b());
  EXPECT_NE(split_rng(5, 0)(), c());
}

TEST(RenderTest, SinglePoleOneCellPerLayer) {
  std::mt19937_64 rng(1);
  Pose6 gt;
  gt.t = {0, 0, 1.8};
  const std::vector pole{MapElement::vertical(1, SemanticType::kPole, {3.1, -2.2}, 6)};
  const BevPyramid p = render_oracle_bev(pole, gt, Signatures(), PyramidSpec{}, 0.0, rng);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const BevGrid& g = p.layers[static_cast<std::size_t>(l)];
    ASSERT_EQ(Nonzero(g), 1) << "level " << l;
    const Eigen::Vector2d q = oracle::to_grid(gt, {3.1, -2.2, 0.0}, g.spec);
    const int h = static_cast<int>(std::floor(q.x() + 0.5)), w = static_cast<int>(std::floor(q.y() + 0.5));
    const auto& sig = Signatures().sig[static_cast<std::size_t>(l)][static_cast<std::size_t>(index_of(SemanticType::kPole))];
    for (int c = 0; c < g.channels; ++c) EXPECT_EQ(g.at(h, w, c), sig[static_cast<std::size_t>(c)]);
  }
}

TEST(RenderTest, EmptyMapNoiseStatistics) {
  std::mt19937_64 rng(2);
  const double rel = 0.3;
  const BevPyramid p = render_oracle_bev({}, Pose6{}, Signatures(), PyramidSpec{}, rel, rng);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const auto& d = p.layers[static_cast<std::size_t>(l)].data;
    ASSERT_GE(d.size(), 10000u);
    double mean = 0.0, sq = 0.0;
    for (double x : d) mean += x / d.size();
    for (double x : d) sq += (x - mean) * (x - mean) / (d.size() - 1);
    const double target = rel * Signatures().mean_norm(l);
    EXPECT_NEAR(std::sqrt(sq), target, 0.05 * target) << "level " << l;
  }
}

TEST(RenderTest, ProbabilitiesOnOccupiedCells) {
  std::mt19937_64 rng(3);
  SceneSpec spec;
  spec.road_length = 200;
  spec.poles_per_km = 100;
  const Scene scene = generate_scene(spec);
  const Pose6 gt = scene.trajectory[60];
  const auto visible = visible_elements(scene.map, gt, PyramidSpec{}.base);
  const BevPyramid p = render_oracle_bev(visible, gt, Signatures(), PyramidSpec{}, 0.0, rng);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const BevGrid& g = p.layers[static_cast<std::size_t>(l)];
    const auto masks = rasterize_all_types(visible, gt, g.spec);
    const auto probs = semantic_probabilities(g, Frozen(), l);
    int occupied = 0;
    for (int j = 0; j < kNumSemanticTypes; ++j) {
      const auto& m = masks[static_cast<std::size_t>(j)];
      for (std::size_t c = 0; c < m.cells.size(); ++c) {
        const double pr = probs[static_cast<std::size_t>(j)][c];
        if (m.cells[c]) {
          ++occupied;
          EXPECT_GE(pr, 0.9 - 1e-12);
        } else {
          // Another type's signature is orthogonal to this row.
          EXPECT_NEAR(pr, 0.5, 1e-9);
        }
      }
    }
    EXPECT_GT(occupied, 0);
  }
}

TEST(RenderTest, Deterministic) {
  SceneSpec spec;
  spec.road_length = 200;
  const Scene scene = generate_scene(spec);
  FrameSpec fs;
  fs.noise_rel = 0.2;
  fs.min_visible = 5;
  const Frame a = make_frame(scene, Signatures(), fs, 9, 3), b = make_frame(scene, Signatures(), fs, 9, 3);
  EXPECT_EQ(a.pyramid.layers[0].data, b.pyramid.layers[0].data);
  EXPECT_EQ(a.init_pose.t, b.init_pose.t);
  EXPECT_EQ(a.elements.size(), b.elements.size());
}

TEST(PerturbTest, ZeroRangeIsIdentity) {
  std::mt19937_64 rng(4);
  const Pose6 gt = oracle::random_pose(rng, 0.03);
  const PerturbedPose p = perturb_pose(gt, {0, 0, 0}, rng);
  EXPECT_EQ(p.init.t, gt.t);
  EXPECT_EQ(p.init.R, gt.R);
  EXPECT_FALSE(p.exceeds_range);
}

TEST(PerturbTest, RecordedOffsetInvertsComposition) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Pose6 gt = oracle::random_pose(rng, 0.03);
    const PerturbedPose p = perturb_pose(gt, {2, 2, deg_to_rad(2)}, rng);
    const Pose6 back = compose(p.init, p.true_offset);
    EXPECT_LT((back.t - gt.t).norm(), 1e-12);
    EXPECT_LT((back.R - gt.R).norm(), 1e-12);
  }
  EXPECT_TRUE(perturb_pose(Pose6{}, {4, 1, 0.01}, rng).exceeds_range);
}

// One-sample Kolmogorov-Smirnov against U(-r, r); 1.63/sqrt(n) is the 1% level.
double KsStatistic(std::vector<double> x, double r) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = (x[i] + r) / (2 * r);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

TEST(PerturbTest, OffsetsUniform) {
  std::mt19937_64 rng(6);
  const SearchRange r{2, 1.5, deg_to_rad(2)};
  std::vector<double> x, y, yaw;
  // The offset is drawn in the init frame and then inverted for the record,
  // so test the draw through init relative to gt.
  for (int k = 0; k < 1000; ++k) {
    const PerturbedPose p = perturb_pose(Pose6{}, r, rng);
    const PoseOffset3 o = relative_offset(Pose6{}, p.init);
    x.push_back(o.dx);
    y.push_back(o.dy);
    yaw.push_back(o.dpsi);
  }
  const double bound = 1.63 / std::sqrt(1000.0);
  EXPECT_LT(KsStatistic(x, r.x), bound);
  EXPECT_LT(KsStatistic(y, r.y), bound);
  EXPECT_LT(KsStatistic(yaw, r.yaw), bound);
}

TEST(AugmentTest, ZeroAnglesAreIdentity) {
  SceneSpec spec;
  spec.road_length = 200;
  const Scene scene = generate_scene(spec);
  FrameSpec fs;
  fs.min_visible = 5;
  const Frame f = make_frame(scene, Signatures(), fs, 1, 0);
  std::mt19937_64 rng(7);
  const Frame g = augment_lidar_rotation(f, 0.0, scene.map, Signatures(), fs, rng);
  EXPECT_LT((g.gt_pose.R - f.gt_pose.R).norm(), 1e-15);
  EXPECT_LT((g.init_pose.t - f.init_pose.t).norm(), 1e-12);
  EXPECT_EQ(g.pyramid.layers[0].data, f.pyramid.layers[0].data);
  EXPECT_EQ(serialize_map(rotate_map(scene.map, 0.0)), serialize_map(scene.map));
}

TEST(AugmentTest, WorldRotationInverse) {
  SceneSpec spec;
  spec.road_length = 200;
  const Scene scene = generate_scene(spec);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const double phi = uniform(rng, -M_PI, M_PI);
    const VectorMap back = rotate_map(rotate_map(scene.map, phi), -phi);
    for (std::size_t i = 0; i < back.elements.size(); ++i) {
      for (int k = 0; k < 8; ++k) {
        EXPECT_NEAR(back.elements[i].geom[static_cast<std::size_t>(k)], scene.map.elements[i].geom[static_cast<std::size_t>(k)], 1e-9);
      }
    }
    VectorMap m = scene.map;
    std::vector<Pose6> poses(scene.trajectory.begin(), scene.trajectory.begin() + 5);
    augment_world_rotation(m, poses, phi);
    for (std::size_t k = 0; k < poses.size(); ++k) {
      EXPECT_LT((rotate_pose(poses[k], -phi).t - scene.trajectory[k].t).norm(), 1e-9);
    }
  }
}

TEST(AugmentTest, LidarRotationKeepsOffset) {
  SceneSpec spec;
  spec.road_length = 200;
  const Scene scene = generate_scene(spec);
  FrameSpec fs;
  fs.min_visible = 5;
  const Frame f = make_frame(scene, Signatures(), fs, 2, 1);
  std::mt19937_64 rng(9);
  const Frame g = augment_lidar_rotation(f, 0.3, scene.map, Signatures(), fs, rng);
  EXPECT_NEAR(g.true_offset.dx, f.true_offset.dx, 1e-12);
  EXPECT_NEAR(g.true_offset.dy, f.true_offset.dy, 1e-12);
  EXPECT_NEAR(g.true_offset.dpsi, f.true_offset.dpsi, 1e-12);
  EXPECT_LT((g.gt_pose.R - f.gt_pose.R * oracle::rz(0.3)).norm(), 1e-12);
}

// Solving in a rotated world gives the same local offset: the render, the
// lifting and the candidate moves are all expressed in the sensor frame.
TEST(AugmentTest, WorldRotationEquivariantSolve) {
  SceneSpec spec;
  spec.road_length = 200;
  spec.poles_per_km = 120;
  const Scene scene = generate_scene(spec);
  const Model<double>& model = Frozen();
  std::mt19937_64 rng(10);
  int compared = 0;
  for (int trial = 0; trial < 3; ++trial) {
    Pose6 gt = scene.trajectory[static_cast<std::size_t>(40 + 50 * trial)];
    gt.t.x() += 0.137;  // off the lattice
    gt.t.y() -= 0.211;
    const PerturbedPose pp = perturb_pose(gt, {1.5, 1.5, deg_to_rad(1.5)}, rng);
    const double phi = uniform(rng, -M_PI, M_PI);
    auto solve = [&](const VectorMap& map, const Pose6& g, const Pose6& init) {
      const auto visible = visible_elements(map, g, PyramidSpec{}.base);
      std::mt19937_64 r(0);
      const BevPyramid p = render_oracle_bev(visible, g, Signatures(), PyramidSpec{}, 0.0, r);
      const auto emb = decode(model, visible, init, p.layers[0]);
      return solve_multilevel(p, visible, emb, init, SolverConfig{}, model);
    };
    const SolverResult a = solve(scene.map, gt, pp.init);
    const SolverResult b = solve(rotate_map(scene.map, phi), rotate_pose(gt, phi), rotate_pose(pp.init, phi));
    EXPECT_NEAR(a.delta.dx, b.delta.dx, 1e-6);
    EXPECT_NEAR(a.delta.dy, b.delta.dy, 1e-6);
    EXPECT_NEAR(a.delta.dpsi, b.delta.dpsi, 1e-6);
    ++compared;
  }
  EXPECT_EQ(compared, 3);
}

TEST(AblationTest, EdgeProbabilities) {
  Frame f;
  for (int i = 0; i < 10; ++i) {
    f.elements.push_back(MapElement::vertical(i, i % 2 ? SemanticType::kPole : SemanticType::kTrafficSign, {i * 1.0, 0}, 4));
  }
  std::mt19937_64 rng(11);
  Frame g = f;
  EXPECT_TRUE(ablate_landmarks(g, {}, rng).empty());
  EXPECT_EQ(g.elements.size(), 10u);
  std::array<double, kNumSemanticTypes> drop{};
  drop[static_cast<std::size_t>(index_of(SemanticType::kPole))] = 1.0;
  ablate_landmarks(g, drop, rng);
  EXPECT_EQ(g.elements.size(), 5u);
  for (const auto& e : g.elements) EXPECT_NE(e.sem, SemanticType::kPole);
  drop[0] = 1.5;
  EXPECT_THROW(ablate_landmarks(g, drop, rng), ArgumentError);
}

TEST(AblationTest, EmpiricalRateWithinThreeSigma) {
  std::mt19937_64 rng(12);
  const double p = 0.3, q = 0.05;
  std::array<double, kNumSemanticTypes> drop{};
  drop[static_cast<std::size_t>(index_of(SemanticType::kPole))] = p;
  drop[static_cast<std::size_t>(index_of(SemanticType::kRoadBoundary))] = q;
  int poles = 0, bounds = 0;
  const int n = 1000;
  for (int k = 0; k < n; ++k) {
    Frame f;
    f.elements = {MapElement::vertical(1, SemanticType::kPole, {0, 0}, 4),
                  MapElement::segment(2, SemanticType::kRoadBoundary, {0, 0}, {1, 0})};
    for (SemanticType t : ablate_landmarks(f, drop, rng)) {
      poles += t == SemanticType::kPole;
      bounds += t == SemanticType::kRoadBoundary;
    }
  }
  EXPECT_NEAR(poles, n * p, 3 * std::sqrt(n * p * (1 - p)));
  EXPECT_NEAR(bounds, n * q, 3 * std::sqrt(n * q * (1 - q)));
}

}  // namespace
}  // namespace vecloc
