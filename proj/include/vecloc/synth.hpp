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

#ifndef VECLOC_SYNTH_HPP_
#define VECLOC_SYNTH_HPP_

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "vecloc/bev_grid.hpp"
#include "vecloc/geometry.hpp"
#include "vecloc/map_core.hpp"
#include "vecloc/matcher.hpp"

namespace vecloc {

// Densities are per kilometre of road.
struct SceneSpec {
  std::uint64_t seed = 1;
  double road_length = 600.0;
  double straight_fraction = 0.5;
  double curve_radius = 250.0;
  int lanes = 3;
  double lane_width = 3.5;
  double dash_length = 3.0;
  double dash_gap = 6.0;
  double boundary_piece = 10.0;
  double poles_per_km = 60.0;
  double signs_per_km = 20.0;
  double surfels_per_km = 150.0;
  double crossings_per_km = 4.0;
  double markings_per_km = 20.0;

  void validate() const;
};

struct Scene {
  VectorMap map;
  // Lane-center poses at 1 m spacing per lane, flat, at sensor height.
  std::vector<Pose6> trajectory;
};

Scene generate_scene(const SceneSpec& spec);

// Deterministic stream for (seed, index).
std::mt19937_64 split_rng(std::uint64_t seed, std::uint64_t index);

// Per-level, per-type feature vectors written by the oracle renderer.
struct SignatureSet {
  std::array<std::array<std::vector<double>, kNumSemanticTypes>, kPyramidLevels> sig;

  double mean_norm(int level) const;
};

inline constexpr double kOracleDot = 2.1972245773362196;  // ln 9

// sig_{l,j} = E'_j ln 9 / |E'_j|^2 with E'_j = layer_proj_l E_j, so that
// sig . E'_j = ln 9 (probability 0.9).
SignatureSet oracle_signatures(const Model<double>& frozen);

struct PyramidSpec {
  GridSpec base = GridSpec::centered(64, 64, 0.5);
  std::array<int, kPyramidLevels> channels{32, 16, 8};

  GridSpec level(int l) const { return base.refined(l); }
};

// Each type's signature is added to every cell rasterize_semantic_gt marks at
// `gt_pose`, then i.i.d. Gaussian noise of std noise_rel * mean signature
// norm is added per level.
BevPyramid render_oracle_bev(std::span<const MapElement> elements, const Pose6& gt_pose,
                             const SignatureSet& signatures, const PyramidSpec& pyramid,
                             double noise_rel, std::mt19937_64& rng);

struct PerturbedPose {
  Pose6 init;
  PoseOffset3 true_offset;  // relative_offset(init, gt)
  bool exceeds_range = false;
};

// init = gt (+) uniform offset in +-ranges.
PerturbedPose perturb_pose(const Pose6& gt_pose, const SearchRange& ranges,
                           std::mt19937_64& rng, const SearchRange& solver_range = {
                                                      3.0, 3.0, deg_to_rad(3.0)});

struct FrameSpec {
  PyramidSpec pyramid;
  SearchRange perturb{2.0, 2.0, deg_to_rad(2.0)};
  double noise_rel = 0.0;
  std::array<double, kNumSemanticTypes> dropout{};
  double max_tilt = deg_to_rad(2.0);
  // The gt pose leaves the lane-center trajectory by up to these amounts.
  double lateral_jitter = 0.4;
  double along_jitter = 0.5;
  double heading_jitter = deg_to_rad(1.0);
  int min_visible = 20;
  int max_attempts = 50;
};

struct Frame {
  std::uint64_t id = 0;
  Pose6 gt_pose;
  Pose6 init_pose;
  PoseOffset3 true_offset;
  bool exceeds_range = false;
  std::vector<MapElement> elements;  // what the solver matches, after dropout
  std::vector<SemanticType> dropped;
  BevPyramid pyramid;
};

// Elements with at least one projected point inside the layer-0 grid.
std::vector<MapElement> visible_elements(const VectorMap& map, const Pose6& pose,
                                         const GridSpec& spec);

// Draws a tilted gt pose on the trajectory, an init pose, renders the BEV
// from every visible element and applies dropout to the matched list.
// Redraws the pose until at least min_visible elements remain.
Frame make_frame(const Scene& scene, const SignatureSet& signatures, const FrameSpec& spec,
                 std::uint64_t seed, std::uint64_t index);

// Removes each type from the matched list with its own probability; the BEV
// is left untouched.
std::vector<SemanticType> ablate_landmarks(Frame& frame,
                                           const std::array<double, kNumSemanticTypes>& dropout,
                                           std::mt19937_64& rng);

// Rotates the sensor about its own z axis by theta and re-renders.
Frame augment_lidar_rotation(const Frame& frame, double theta, const VectorMap& map,
                             const SignatureSet& signatures, const FrameSpec& spec,
                             std::mt19937_64& rng);

// Rotates map geometry and poses about the world z axis by phi. Surfel
// normals rotate with the map.
VectorMap rotate_map(const VectorMap& map, double phi);
Pose6 rotate_pose(const Pose6& pose, double phi);
void augment_world_rotation(VectorMap& map, std::span<Pose6> poses, double phi);

}  // namespace vecloc

#endif  // VECLOC_SYNTH_HPP_
