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
#include <numbers>

#include <fmt/format.h>

#include "vecloc/errors.hpp"

namespace vecloc {
namespace {

constexpr double kSensorHeight = 1.8;
constexpr double kCrossingDepth = 4.0;
constexpr double kStopLineGap = 2.0;
constexpr double kMarkingLength = 2.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Straight section along +x, then a left-hand arc.
class Road {
 public:
  explicit Road(const SceneSpec& spec)
      : length_(spec.road_length),
        s0_(spec.road_length * spec.straight_fraction),
        radius_(spec.curve_radius) {}

  double heading(double s) const { return s <= s0_ ? 0.0 : (s - s0_) / radius_; }

  Eigen::Vector2d center(double s) const {
    if (s <= s0_) return {s, 0.0};
    const double phi = (s - s0_) / radius_;
    return {s0_ + radius_ * std::sin(phi), radius_ * (1.0 - std::cos(phi))};
  }

  Eigen::Vector2d at(double s, double lateral) const {
    const double h = heading(s);
    return center(s) + lateral * Eigen::Vector2d(-std::sin(h), std::cos(h));
  }

  double length() const { return length_; }

 private:
  double length_;
  double s0_;
  double radius_;
};

// n = round(length * density) positions, one per equal slot, jittered within
// the middle 60% of the slot.
std::vector<double> jittered_positions(double length, double per_km, std::mt19937_64& rng) {
  const int n = static_cast<int>(std::lround(length * per_km / 1000.0));
  std::vector<double> out;
  if (n <= 0) return out;
  const double slot = length / n;
  std::uniform_real_distribution<double> jitter(0.2, 0.8);
  for (int k = 0; k < n; ++k) out.push_back((k + jitter(rng)) * slot);
  return out;
}

class Builder {
 public:
  explicit Builder(const Road& road) : road_(road) {}

  void segment(SemanticType sem, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    map.elements.push_back(MapElement::segment(next_id_++, sem, a, b));
  }
  void along(SemanticType sem, double s_a, double s_b, double lateral) {
    segment(sem, road_.at(s_a, lateral), road_.at(s_b, lateral));
  }
  void vertical(SemanticType sem, const Eigen::Vector2d& p, double h) {
    map.elements.push_back(MapElement::vertical(next_id_++, sem, p, h));
  }
  void surfel(const Eigen::Vector2d& p, const Eigen::Vector3d& n, const Eigen::Vector2d& r) {
    map.elements.push_back(MapElement::surfel(next_id_++, p, n, r));
  }

  VectorMap map;

 private:
  const Road& road_;
  std::int64_t next_id_ = 1;
};

}  // namespace

void SceneSpec::validate() const {
  if (!(road_length > 0.0) || !(straight_fraction >= 0.0 && straight_fraction <= 1.0) ||
      !(curve_radius > 0.0) || lanes < 1 || !(lane_width > 0.0) || !(dash_length > 0.0) ||
      !(dash_gap >= 0.0) || !(boundary_piece > 0.0)) {
    throw ValidationError("scene spec: non-positive road geometry");
  }
  for (double d : {poles_per_km, signs_per_km, surfels_per_km, crossings_per_km,
                   markings_per_km}) {
    if (!(d >= 0.0)) throw ValidationError("scene spec: densities must be >= 0");
  }
}

std::mt19937_64 split_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng = split_rng(spec.seed, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Road road(spec);
  const double L = spec.road_length;
  const double half_width = 0.5 * spec.lanes * spec.lane_width;
  Builder b(road);

  for (int k = 0; k <= spec.lanes; ++k) {
    const double lateral = -half_width + k * spec.lane_width;
    if (k == 0 || k == spec.lanes) {
      for (double s = 0.0; s < L; s += spec.boundary_piece) {
        b.along(SemanticType::kLaneLine, s, std::min(L, s + spec.boundary_piece), lateral);
      }
    } else {
      const double period = spec.dash_length + spec.dash_gap;
      for (double s = unit(rng) * period; s + spec.dash_length <= L; s += period) {
        b.along(SemanticType::kLaneLine, s, s + spec.dash_length, lateral);
      }
    }
  }
  for (double side : {-1.0, 1.0}) {
    const double lateral = side * (half_width + 0.5);
    for (double s = 0.0; s < L; s += spec.boundary_piece) {
      b.along(SemanticType::kRoadBoundary, s, std::min(L, s + spec.boundary_piece), lateral);
    }
  }
  for (double s : jittered_positions(L - kCrossingDepth, spec.crossings_per_km, rng)) {
    const double s1 = s + kCrossingDepth;
    const double lo = -half_width;
    const double hi = half_width;
    b.segment(SemanticType::kPedestrianCrossing, road.at(s, lo), road.at(s, hi));
    b.segment(SemanticType::kPedestrianCrossing, road.at(s, hi), road.at(s1, hi));
    b.segment(SemanticType::kPedestrianCrossing, road.at(s1, hi), road.at(s1, lo));
    b.segment(SemanticType::kPedestrianCrossing, road.at(s1, lo), road.at(s, lo));
    if (s > kStopLineGap) {
      b.segment(SemanticType::kStopLine, road.at(s - kStopLineGap, lo),
                road.at(s - kStopLineGap, 0.0));
    }
  }
  for (double s : jittered_positions(L - kMarkingLength, spec.markings_per_km, rng)) {
    const int lane = static_cast<int>(unit(rng) * spec.lanes) % spec.lanes;
    const double lateral = -half_width + (lane + 0.5) * spec.lane_width;
    b.along(SemanticType::kRoadMarking, s, s + kMarkingLength, lateral);
  }
  for (double s : jittered_positions(L, spec.poles_per_km, rng)) {
    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    const double lateral = side * (half_width + 1.5 + unit(rng));
    b.vertical(SemanticType::kPole, road.at(s, lateral), 6.0 + 4.0 * unit(rng));
  }
  for (double s : jittered_positions(L, spec.signs_per_km, rng)) {
    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    const double lateral = side * (half_width + 1.0 + unit(rng));
    b.vertical(SemanticType::kTrafficSign, road.at(s, lateral), 2.5 + 1.5 * unit(rng));
  }
  std::vector<MapElement> surfels;
  {
    Builder facade(road);
    for (double s : jittered_positions(L, spec.surfels_per_km, rng)) {
      const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
      const double lateral = side * (half_width + 6.0 + 6.0 * unit(rng));
      const double h = road.heading(s) + 0.1 * (unit(rng) - 0.5);
      Eigen::Vector3d n(side * std::sin(h), -side * std::cos(h), 0.2 * (unit(rng) - 0.5));
      n.normalize();
      const double r1 = 0.005 + 0.09 * unit(rng);
      const double r2 = r1 * (0.1 + 0.9 * unit(rng));
      facade.surfel(road.at(s, lateral), n, {r1, r2});
    }
    surfels = filter_surfels(facade.map.elements);
  }
  Scene scene;
  scene.map = std::move(b.map);
  std::int64_t next = static_cast<std::int64_t>(scene.map.elements.size()) + 1;
  for (MapElement e : surfels) {
    e.id = next++;
    scene.map.elements.push_back(e);
  }
  scene.map.update_bounds();
  validate(scene.map);

  for (int lane = 0; lane < spec.lanes; ++lane) {
    const double lateral = -half_width + (lane + 0.5) * spec.lane_width;
    for (double s = 0.0; s <= L; s += 1.0) {
      const Eigen::Vector2d p = road.at(s, lateral);
      scene.trajectory.push_back(
          Pose6::from_euler({p.x(), p.y(), kSensorHeight}, road.heading(s), 0.0, 0.0));
    }
  }
  return scene;
}

double SignatureSet::mean_norm(int level) const {
  double total = 0.0;
  for (const auto& s : sig[static_cast<std::size_t>(level)]) {
    double n2 = 0.0;
    for (double x : s) n2 += x * x;
    total += std::sqrt(n2);
  }
  return total / kNumSemanticTypes;
}

SignatureSet oracle_signatures(const Model<double>& frozen) {
  SignatureSet set;
  for (int l = 0; l < kPyramidLevels; ++l) {
    for (int j = 0; j < kNumSemanticTypes; ++j) {
      std::vector<double> e = level_embedding(frozen.params, l, frozen.table.E.row(j));
      double n2 = 0.0;
      for (double x : e) n2 += x * x;
      if (!(n2 > 0.0)) throw ArgumentError("oracle_signatures: zero embedding row");
      for (double& x : e) x *= kOracleDot / n2;
      set.sig[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)] = std::move(e);
    }
  }
  return set;
}

BevPyramid render_oracle_bev(std::span<const MapElement> elements, const Pose6& gt_pose,
                             const SignatureSet& signatures, const PyramidSpec& pyramid,
                             double noise_rel, std::mt19937_64& rng) {
  if (!(noise_rel >= 0.0)) throw ArgumentError("render_oracle_bev: negative noise");
  BevPyramid out;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::size_t s = static_cast<std::size_t>(l);
    const GridSpec spec = pyramid.level(l);
    BevGrid grid(spec, pyramid.channels[s], l);
    const auto masks = rasterize_all_types(elements, gt_pose, spec);
    for (int j = 0; j < kNumSemanticTypes; ++j) {
      const std::vector<double>& sig = signatures.sig[s][static_cast<std::size_t>(j)];
      if (static_cast<int>(sig.size()) != grid.channels) {
        throw ArgumentError(fmt::format("render_oracle_bev: level {} signature width", l));
      }
      const SemanticMask& mask = masks[static_cast<std::size_t>(j)];
      for (std::size_t c = 0; c < mask.cells.size(); ++c) {
        if (mask.cells[c] == 0) continue;
        const std::span<double> cell(grid.data.data() + c * sig.size(), sig.size());
        for (std::size_t k = 0; k < sig.size(); ++k) cell[k] += sig[k];
      }
    }
    if (noise_rel > 0.0) {
      std::normal_distribution<double> noise(0.0, noise_rel * signatures.mean_norm(l));
      for (double& x : grid.data) x += noise(rng);
    }
    out.layers[s] = std::move(grid);
  }
  return out;
}

PerturbedPose perturb_pose(const Pose6& gt_pose, const SearchRange& ranges,
                           std::mt19937_64& rng, const SearchRange& solver_range) {
  auto draw = [&](double r) {
    if (!(r >= 0.0)) throw ArgumentError("perturb_pose: negative range");
    if (r == 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-r, r)(rng);
  };
  PoseOffset3 o;
  o.dx = draw(ranges.x);
  o.dy = draw(ranges.y);
  o.dpsi = draw(ranges.yaw);
  PerturbedPose p;
  p.init = compose(gt_pose, o);
  p.true_offset = relative_offset(p.init, gt_pose);
  p.exceeds_range = ranges.x > solver_range.x || ranges.y > solver_range.y ||
                    ranges.yaw > solver_range.yaw;
  return p;
}

std::vector<MapElement> visible_elements(const VectorMap& map, const Pose6& pose,
                                         const GridSpec& spec) {
  const double radius =
      std::hypot(std::max(-spec.h_min, spec.h_min + spec.extent_h()),
                 std::max(-spec.w_min, spec.w_min + spec.extent_w())) + 1.0;
  const std::vector<MapElement> near =
      query_window(map, pose.t.head<2>(), Eigen::Vector2d(radius, radius));
  const auto projected = project_elements(pose, near, spec, raster_sampling(spec));
  std::vector<MapElement> out;
  for (std::size_t i = 0; i < near.size(); ++i) {
    for (const Eigen::Vector2d& p : projected[i]) {
      if (p.x() >= 0.0 && p.x() <= spec.H - 1 && p.y() >= 0.0 && p.y() <= spec.W - 1) {
        out.push_back(near[i]);
        break;
      }
    }
  }
  return out;
}

std::vector<SemanticType> ablate_landmarks(Frame& frame,
                                           const std::array<double, kNumSemanticTypes>& dropout,
                                           std::mt19937_64& rng) {
  std::vector<SemanticType> dropped;
  for (int j = 0; j < kNumSemanticTypes; ++j) {
    const double p = dropout[static_cast<std::size_t>(j)];
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("ablate_landmarks: probability outside [0, 1]");
    if (p == 0.0) continue;
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p) {
      dropped.push_back(kAllSemanticTypes[static_cast<std::size_t>(j)]);
    }
  }
  std::erase_if(frame.elements, [&](const MapElement& e) {
    return std::find(dropped.begin(), dropped.end(), e.sem) != dropped.end();
  });
  frame.dropped.insert(frame.dropped.end(), dropped.begin(), dropped.end());
  return dropped;
}

Frame make_frame(const Scene& scene, const SignatureSet& signatures, const FrameSpec& spec,
                 std::uint64_t seed, std::uint64_t index) {
  if (scene.trajectory.empty()) throw ArgumentError("make_frame: empty trajectory");
  std::mt19937_64 rng = split_rng(seed, index + 1);
  std::uniform_int_distribution<std::size_t> pick(0, scene.trajectory.size() - 1);
  std::uniform_real_distribution<double> tilt(-spec.max_tilt, spec.max_tilt);
  auto symmetric = [&](double r) {
    return r > 0.0 ? std::uniform_real_distribution<double>(-r, r)(rng) : 0.0;
  };
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    const Pose6& base = scene.trajectory[pick(rng)];
    const double pitch = spec.max_tilt > 0.0 ? tilt(rng) : 0.0;
    const double roll = spec.max_tilt > 0.0 ? tilt(rng) : 0.0;
    const PoseOffset3 jitter{symmetric(spec.along_jitter), symmetric(spec.lateral_jitter),
                             symmetric(spec.heading_jitter)};
    const Pose6 moved = compose(base, jitter);
    Frame frame;
    frame.id = index;
    frame.gt_pose = Pose6::from_euler(moved.t, moved.yaw(), pitch, roll);
    const PerturbedPose p = perturb_pose(frame.gt_pose, spec.perturb, rng);
    frame.init_pose = p.init;
    frame.true_offset = p.true_offset;
    frame.exceeds_range = p.exceeds_range;
    const std::vector<MapElement> visible =
        visible_elements(scene.map, frame.gt_pose, spec.pyramid.base);
    frame.elements = visible;
    ablate_landmarks(frame, spec.dropout, rng);
    if (static_cast<int>(frame.elements.size()) < spec.min_visible) continue;
    frame.pyramid = render_oracle_bev(visible, frame.gt_pose, signatures, spec.pyramid,
                                      spec.noise_rel, rng);
    return frame;
  }
  throw SamplingError(fmt::format(
      "make_frame: no pose with {} visible elements after {} attempts", spec.min_visible,
      spec.max_attempts));
}

Frame augment_lidar_rotation(const Frame& frame, double theta, const VectorMap& map,
                             const SignatureSet& signatures, const FrameSpec& spec,
                             std::mt19937_64& rng) {
  if (!std::isfinite(theta)) throw ArgumentError("augment_lidar_rotation: non-finite angle");
  Frame out = frame;
  out.gt_pose.R = frame.gt_pose.R * rot_z(theta);
  out.init_pose = compose(out.gt_pose, inverse(frame.true_offset));
  out.true_offset = relative_offset(out.init_pose, out.gt_pose);
  const std::vector<MapElement> visible = visible_elements(map, out.gt_pose, spec.pyramid.base);
  out.pyramid =
      render_oracle_bev(visible, out.gt_pose, signatures, spec.pyramid, spec.noise_rel, rng);
  return out;
}

Pose6 rotate_pose(const Pose6& pose, double phi) {
  Pose6 out;
  out.R = rot_z(phi) * pose.R;
  out.t = rot_z(phi) * pose.t;
  return out;
}

VectorMap rotate_map(const VectorMap& map, double phi) {
  if (!std::isfinite(phi)) throw ArgumentError("rotate_map: non-finite angle");
  const Eigen::Matrix2d R = rot_z(phi).topLeftCorner<2, 2>();
  VectorMap out = map;
  for (MapElement& e : out.elements) {
    const Eigen::Vector2d a = R * e.anchor();
    e.geom[0] = a.x();
    e.geom[1] = a.y();
    if (e.kind() == GeometryKind::kSegment) {
      const Eigen::Vector2d b = R * e.end();
      e.geom[2] = b.x();
      e.geom[3] = b.y();
    } else if (e.kind() == GeometryKind::kSurfel) {
      const Eigen::Vector2d n = R * Eigen::Vector2d(e.geom[2], e.geom[3]);
      e.geom[2] = n.x();
      e.geom[3] = n.y();
    }
  }
  out.update_bounds();
  return out;
}

void augment_world_rotation(VectorMap& map, std::span<Pose6> poses, double phi) {
  map = rotate_map(map, phi);
  for (Pose6& p : poses) p = rotate_pose(p, phi);
}

}  // namespace vecloc
