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

// Brute-force reference implementations. They share no code with the
// library beyond plain data types, and favor the most literal formulation
// over speed.

#ifndef VECLOC_TESTS_SUPPORT_ORACLES_HPP_
#define VECLOC_TESTS_SUPPORT_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "vecloc/bev_grid.hpp"
#include "vecloc/geometry.hpp"
#include "vecloc/map_core.hpp"
#include "vecloc/matcher.hpp"
#include "vecloc/pose_solver.hpp"

namespace vecloc::oracle {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::Matrix3d rz(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

inline Eigen::Matrix3d ry(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}

inline Eigen::Matrix3d rx(double a) {
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}

inline Pose6 pose(const Eigen::Vector3d& t, double yaw, double pitch, double roll) {
  Pose6 p;
  p.t = t;
  p.R = rz(yaw) * ry(pitch) * rx(roll);
  return p;
}

inline Pose6 random_pose(std::mt19937_64& rng, double max_tilt) {
  return pose({uniform(rng, -50, 50), uniform(rng, -50, 50), uniform(rng, 1.0, 2.5)},
              uniform(rng, -M_PI, M_PI), uniform(rng, -max_tilt, max_tilt),
              uniform(rng, -max_tilt, max_tilt));
}

// Where the vertical line through (x, y) meets the plane through the sensor
// origin with normal R e_z: solve (P0 + s e_z - t) . n = 0 for s.
inline Eigen::Vector3d vertical_line_plane(const Pose6& p, double x, double y) {
  const Eigen::Vector3d n = p.R.col(2);
  const Eigen::Vector3d p0(x, y, 0.0);
  const Eigen::Vector3d d(0.0, 0.0, 1.0);
  const double s = (p.t - p0).dot(n) / d.dot(n);
  return p0 + s * d;
}

// World point to continuous grid coordinates under `sensor`.
inline Eigen::Vector2d to_grid(const Pose6& sensor, const Eigen::Vector3d& world,
                               const GridSpec& spec) {
  const Eigen::Vector3d local = sensor.R.transpose() * (world - sensor.t);
  return {(local.x() - spec.h_min) / spec.resolution, (local.y() - spec.w_min) / spec.resolution};
}

// Tent-kernel sum over every node; zero outside the node hull.
inline std::vector<double> bilinear(const BevGrid& g, double u, double v) {
  std::vector<double> out(static_cast<std::size_t>(g.channels), 0.0);
  if (u < 0 || v < 0 || u > g.spec.H - 1 || v > g.spec.W - 1) return out;
  for (int i = 0; i < g.spec.H; ++i) {
    for (int j = 0; j < g.spec.W; ++j) {
      const double w = std::max(0.0, 1.0 - std::abs(u - i)) * std::max(0.0, 1.0 - std::abs(v - j));
      if (w == 0.0) continue;
      for (int c = 0; c < g.channels; ++c) out[static_cast<std::size_t>(c)] += w * g.at(i, j, c);
    }
  }
  return out;
}

// n evenly spaced points from start to end inclusive (one point if n == 1
// or the segment is degenerate); the anchor for point-like elements.
inline std::vector<Eigen::Vector2d> points_of(const MapElement& e, int n) {
  if (e.kind() != GeometryKind::kSegment) return {e.anchor()};
  const Eigen::Vector2d a = e.anchor(), b = e.end();
  if ((b - a).norm() == 0.0 || n == 1) return {a};
  std::vector<Eigen::Vector2d> pts;
  for (int k = 0; k < n; ++k) pts.push_back(a + (b - a) * (static_cast<double>(k) / (n - 1)));
  return pts;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

// Scores by literal application of the definition: move the sensor on the
// base pose's plane, sample each element's points, average, take the
// element-wise product with the embedding, apply the head, average over
// elements. Segments use exactly `n_points` samples.
inline std::vector<double> scores(const BevGrid& grid, const std::vector<MapElement>& elements,
                                  const std::vector<std::vector<double>>& emb,
                                  const ScoreHead<double>& head,
                                  const std::vector<PoseOffset3>& candidates, const Pose6& base,
                                  int n_points) {
  std::vector<double> out;
  for (const PoseOffset3& o : candidates) {
    Pose6 moved;
    const Eigen::Vector3d shift = rz(std::atan2(base.R(1, 0), base.R(0, 0))) *
                                  Eigen::Vector3d(o.dx, o.dy, 0.0);
    moved.t = base.t + shift;
    moved.R = rz(o.dpsi) * base.R;
    double total = 0.0;
    for (std::size_t i = 0; i < elements.size(); ++i) {
      const auto pts = points_of(elements[i], n_points);
      std::vector<double> mean(static_cast<std::size_t>(grid.channels), 0.0);
      for (const Eigen::Vector2d& p : pts) {
        const Eigen::Vector3d on_plane = vertical_line_plane(base, p.x(), p.y());
        const Eigen::Vector2d g = to_grid(moved, on_plane, grid.spec);
        const auto s = bilinear(grid, g.x(), g.y());
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += s[c] / pts.size();
      }
      double h = head.l2.b[0];
      for (int r = 0; r < head.l1.out(); ++r) {
        double a = head.l1.b[static_cast<std::size_t>(r)];
        for (int c = 0; c < head.l1.in(); ++c) {
          a += head.l1.w(r, c) * mean[static_cast<std::size_t>(c)] * emb[i][static_cast<std::size_t>(c)];
        }
        h += head.l2.w(0, r) * gelu(a);
      }
      total += h;
    }
    out.push_back(total / static_cast<double>(elements.size()));
  }
  return out;
}

inline Eigen::Matrix3d covariance(const std::vector<PoseOffset3>& offsets,
                                  const std::vector<double>& probs) {
  double mu[3] = {0, 0, 0};
  for (std::size_t n = 0; n < probs.size(); ++n) {
    const double v[3] = {offsets[n].dx, offsets[n].dy, offsets[n].dpsi};
    for (int a = 0; a < 3; ++a) mu[a] += probs[n] * v[a];
  }
  Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (std::size_t n = 0; n < probs.size(); ++n) {
        const double v[3] = {offsets[n].dx, offsets[n].dy, offsets[n].dpsi};
        S(a, b) += probs[n] * (v[a] - mu[a]) * (v[b] - mu[b]);
      }
    }
  }
  return S;
}

// Per-cell scan: a cell is set when any of the given world points,
// projected with `sensor`, lands within half a cell of its node.
inline std::vector<std::uint8_t> raster(const std::vector<Eigen::Vector2d>& world_points,
                                        const Pose6& sensor, const GridSpec& spec) {
  std::vector<Eigen::Vector2d> g;
  for (const Eigen::Vector2d& p : world_points) {
    g.push_back(to_grid(sensor, vertical_line_plane(sensor, p.x(), p.y()), spec));
  }
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(spec.H * spec.W), 0);
  for (int h = 0; h < spec.H; ++h) {
    for (int w = 0; w < spec.W; ++w) {
      for (const Eigen::Vector2d& q : g) {
        if (q.x() >= h - 0.5 && q.x() < h + 0.5 && q.y() >= w - 0.5 && q.y() < w + 0.5) {
          cells[static_cast<std::size_t>(h * spec.W + w)] = 1;
          break;
        }
      }
    }
  }
  return cells;
}

inline BevGrid random_grid(const GridSpec& spec, int channels, std::mt19937_64& rng) {
  BevGrid g(spec, channels);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : g.data) v = n(rng);
  return g;
}

inline MapElement random_segment(std::int64_t id, std::mt19937_64& rng, double half) {
  const Eigen::Vector2d a(uniform(rng, -half, half), uniform(rng, -half, half));
  const Eigen::Vector2d b = a + Eigen::Vector2d(uniform(rng, -6, 6), uniform(rng, -6, 6));
  return MapElement::segment(id, SemanticType::kLaneLine, a, b);
}

}  // namespace vecloc::oracle

#endif  // VECLOC_TESTS_SUPPORT_ORACLES_HPP_
