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

#ifndef VECLOC_GEOMETRY_HPP_
#define VECLOC_GEOMETRY_HPP_

#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vecloc/map_core.hpp"

namespace vecloc {

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

Eigen::Matrix3d rot_z(double angle);

// 3-DoF correction in the pose's local horizontal frame.
struct PoseOffset3 {
  double dx = 0.0;
  double dy = 0.0;
  double dpsi = 0.0;

  bool operator==(const PoseOffset3&) const = default;
};

// World-from-LiDAR pose.
struct Pose6 {
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();

  // R = Rz(yaw) * Ry(pitch) * Rx(roll).
  static Pose6 from_euler(const Eigen::Vector3d& translation, double yaw,
                          double pitch, double roll);

  double yaw() const;
  double pitch() const;
  double roll() const;

  // Throws ValidationError unless R is orthonormal with det 1 (1e-9).
  void validate() const;
};

// (-pi, pi]. Throws ArgumentError on non-finite input.
double wrap_yaw(double psi);

// Translates by (dx, dy) along the pose's heading axes and yaws by dpsi about
// the world vertical. Roll, pitch and z are unchanged.
Pose6 compose(const Pose6& pose, const PoseOffset3& offset);

// The offset o with compose(from, o) == to, for poses that share roll, pitch
// and z.
PoseOffset3 relative_offset(const Pose6& from, const Pose6& to);

// compose(compose(p, o), inverse(o)) == p.
PoseOffset3 inverse(const PoseOffset3& offset);

struct SearchRange {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // radians
};

// Full grid over [-range, range] per axis with the given steps, x outermost
// and yaw innermost. Each range must be an integer multiple of its step.
std::vector<PoseOffset3> sample_candidate_offsets(const SearchRange& range,
                                                  const SearchRange& step);

int candidate_axis_count(double range, double step);

// BEV grid geometry. Node (i, j) sits at LiDAR-frame (h_min + i r, w_min + j r)
// and its cell spans half a cell on either side.
struct GridSpec {
  int H = 0;
  int W = 0;
  double resolution = 1.0;
  double h_min = 0.0;
  double w_min = 0.0;

  // Vehicle at node (H/2, W/2).
  static GridSpec centered(int H, int W, double resolution);

  // Same metric extent, 2^level times finer.
  GridSpec refined(int level) const;

  double extent_h() const { return H * resolution; }
  double extent_w() const { return W * resolution; }

  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

// The plane through the sensor origin orthogonal to the sensor z axis.
struct BevPlane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();

  static BevPlane of(const Pose6& pose);

  // Height where the vertical line through (x, y) meets the plane. Throws
  // DegeneratePlaneError when |n_z| < 1e-6.
  double height_at(double x, double y) const;
  Eigen::Vector3d lift(const Eigen::Vector2d& xy) const;
};

inline constexpr double kMinPlaneNormalZ = 1e-6;

// LiDAR-frame point to continuous grid coordinates.
inline Eigen::Vector2d lidar_to_grid(const Eigen::Vector3d& p_lidar,
                                     const GridSpec& spec) {
  return {(p_lidar.x() - spec.h_min) / spec.resolution,
          (p_lidar.y() - spec.w_min) / spec.resolution};
}

// World point on the BEV plane to grid coordinates under `pose`.
Eigen::Vector2d world_to_grid(const Pose6& pose, const Eigen::Vector3d& p_world,
                              const GridSpec& spec);

// Vertical-line intersection with the pose's BEV plane, transform into the
// LiDAR frame, then normalization to grid coordinates. The result may fall
// outside the grid.
Eigen::Vector2d project_endpoint_to_bev(const Pose6& pose,
                                        const Eigen::Vector2d& endpoint,
                                        const GridSpec& spec);

// How segments are turned into point sets. `fixed_count` wins when set, then
// `max_spacing`, then the per-10 m density.
struct SegmentSampling {
  int per_ten_meters = 8;
  int minimum = 2;
  int fixed_count = 0;
  double max_spacing = 0.0;

  static SegmentSampling fixed(int count) {
    SegmentSampling s;
    s.fixed_count = count;
    return s;
  }
  static SegmentSampling spacing(double meters) {
    SegmentSampling s;
    s.max_spacing = meters;
    return s;
  }

  int count_for(double length) const;
};

// World-plane points standing in for an element: uniformly spaced points
// including both endpoints for segments (one point if degenerate), the
// ground point for poles and signs, the center for surfels.
std::vector<Eigen::Vector2d> densify(const MapElement& element,
                                     const SegmentSampling& sampling);

std::vector<std::vector<Eigen::Vector2d>> project_elements(
    const Pose6& pose, std::span<const MapElement> elements,
    const GridSpec& spec, const SegmentSampling& sampling);

}  // namespace vecloc

#endif  // VECLOC_GEOMETRY_HPP_
