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

#include "vecloc/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>
#include <fmt/format.h>

#include "vecloc/errors.hpp"

namespace vecloc {

Eigen::Matrix3d rot_z(double angle) {
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

Pose6 Pose6::from_euler(const Eigen::Vector3d& translation, double yaw,
                        double pitch, double roll) {
  Pose6 pose;
  pose.t = translation;
  pose.R = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
               .toRotationMatrix();
  return pose;
}

double Pose6::yaw() const { return std::atan2(R(1, 0), R(0, 0)); }
double Pose6::pitch() const { return std::asin(std::clamp(-R(2, 0), -1.0, 1.0)); }
double Pose6::roll() const { return std::atan2(R(2, 1), R(2, 2)); }

void Pose6::validate() const {
  if (!t.allFinite() || !R.allFinite()) {
    throw ValidationError("pose: non-finite entries");
  }
  if ((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw ValidationError("pose: rotation is not orthonormal");
  }
  if (std::abs(R.determinant() - 1.0) > 1e-9) {
    throw ValidationError("pose: rotation determinant is not 1");
  }
}

double wrap_yaw(double psi) {
  if (!std::isfinite(psi)) throw ArgumentError("wrap_yaw: non-finite angle");
  double r = std::remainder(psi, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

Pose6 compose(const Pose6& pose, const PoseOffset3& offset) {
  Pose6 out;
  const Eigen::Matrix3d heading = rot_z(pose.yaw());
  out.t = pose.t + heading * Eigen::Vector3d(offset.dx, offset.dy, 0.0);
  out.R = rot_z(offset.dpsi) * pose.R;
  return out;
}

PoseOffset3 relative_offset(const Pose6& from, const Pose6& to) {
  const Eigen::Vector3d d = rot_z(from.yaw()).transpose() * (to.t - from.t);
  return {d.x(), d.y(), wrap_yaw(to.yaw() - from.yaw())};
}

PoseOffset3 inverse(const PoseOffset3& offset) {
  const Eigen::Vector3d d =
      -(rot_z(-offset.dpsi) * Eigen::Vector3d(offset.dx, offset.dy, 0.0));
  return {d.x(), d.y(), -offset.dpsi};
}

int candidate_axis_count(double range, double step) {
  if (!(range > 0.0) || !(step > 0.0) || !std::isfinite(range) ||
      !std::isfinite(step)) {
    throw ArgumentError("candidate grid: ranges and steps must be positive");
  }
  const double ratio = range / step;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw ArgumentError(fmt::format(
        "candidate grid: range {} is not an integer multiple of step {}", range,
        step));
  }
  return 2 * static_cast<int>(rounded) + 1;
}

std::vector<PoseOffset3> sample_candidate_offsets(const SearchRange& range,
                                                  const SearchRange& step) {
  const int nx = candidate_axis_count(range.x, step.x);
  const int ny = candidate_axis_count(range.y, step.y);
  const int nyaw = candidate_axis_count(range.yaw, step.yaw);
  const int hx = nx / 2;
  const int hy = ny / 2;
  const int hyaw = nyaw / 2;
  std::vector<PoseOffset3> out;
  out.reserve(static_cast<std::size_t>(nx) * ny * nyaw);
  for (int i = -hx; i <= hx; ++i) {
    for (int j = -hy; j <= hy; ++j) {
      for (int k = -hyaw; k <= hyaw; ++k) {
        out.push_back({i * step.x, j * step.y, k * step.yaw});
      }
    }
  }
  return out;
}

GridSpec GridSpec::centered(int H, int W, double resolution) {
  GridSpec spec;
  spec.H = H;
  spec.W = W;
  spec.resolution = resolution;
  spec.h_min = -0.5 * H * resolution;
  spec.w_min = -0.5 * W * resolution;
  spec.validate();
  return spec;
}

GridSpec GridSpec::refined(int level) const {
  GridSpec spec = *this;
  const int scale = 1 << level;
  spec.H = H * scale;
  spec.W = W * scale;
  spec.resolution = resolution / scale;
  return spec;
}

void GridSpec::validate() const {
  if (H <= 0 || W <= 0 || !(resolution > 0.0) || !std::isfinite(h_min) ||
      !std::isfinite(w_min)) {
    throw ArgumentError("grid spec: H, W and resolution must be positive");
  }
}

BevPlane BevPlane::of(const Pose6& pose) {
  BevPlane plane;
  plane.normal = pose.R.col(2);
  plane.point = pose.t;
  return plane;
}

double BevPlane::height_at(double x, double y) const {
  if (std::abs(normal.z()) < kMinPlaneNormalZ) {
    throw DegeneratePlaneError("BEV plane is vertical; projection undefined");
  }
  return (normal.dot(point) - normal.x() * x - normal.y() * y) / normal.z();
}

Eigen::Vector3d BevPlane::lift(const Eigen::Vector2d& xy) const {
  return {xy.x(), xy.y(), height_at(xy.x(), xy.y())};
}

Eigen::Vector2d world_to_grid(const Pose6& pose, const Eigen::Vector3d& p_world,
                              const GridSpec& spec) {
  return lidar_to_grid(pose.R.transpose() * (p_world - pose.t), spec);
}

Eigen::Vector2d project_endpoint_to_bev(const Pose6& pose,
                                        const Eigen::Vector2d& endpoint,
                                        const GridSpec& spec) {
  return world_to_grid(pose, BevPlane::of(pose).lift(endpoint), spec);
}

int SegmentSampling::count_for(double length) const {
  if (fixed_count > 0) return fixed_count;
  if (max_spacing > 0.0) {
    return std::max(2, static_cast<int>(std::ceil(length / max_spacing)) + 1);
  }
  return std::max(minimum,
                  static_cast<int>(std::lround(length * per_ten_meters / 10.0)));
}

std::vector<Eigen::Vector2d> densify(const MapElement& element,
                                     const SegmentSampling& sampling) {
  if (element.kind() != GeometryKind::kSegment) return {element.anchor()};
  const Eigen::Vector2d a = element.anchor();
  const Eigen::Vector2d b = element.end();
  const double length = (b - a).norm();
  const int n = sampling.count_for(length);
  if (length == 0.0 || n <= 1) return {a};
  std::vector<Eigen::Vector2d> points;
  points.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double s = static_cast<double>(k) / (n - 1);
    points.push_back(a + s * (b - a));
  }
  points.back() = b;
  return points;
}

std::vector<std::vector<Eigen::Vector2d>> project_elements(
    const Pose6& pose, std::span<const MapElement> elements,
    const GridSpec& spec, const SegmentSampling& sampling) {
  const BevPlane plane = BevPlane::of(pose);
  std::vector<std::vector<Eigen::Vector2d>> out;
  out.reserve(elements.size());
  for (const MapElement& e : elements) {
    std::vector<Eigen::Vector2d> grid_points;
    for (const Eigen::Vector2d& p : densify(e, sampling)) {
      grid_points.push_back(world_to_grid(pose, plane.lift(p), spec));
    }
    out.push_back(std::move(grid_points));
  }
  return out;
}

}  // namespace vecloc
