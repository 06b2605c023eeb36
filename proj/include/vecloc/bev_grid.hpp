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

#ifndef VECLOC_BEV_GRID_HPP_
#define VECLOC_BEV_GRID_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vecloc/geometry.hpp"
#include "vecloc/numerics.hpp"
#include "vecloc/map_core.hpp"

namespace vecloc {

// H x W x C feature grid, channel-fastest.
struct BevGrid {
  GridSpec spec;
  int channels = 0;
  int layer = 0;
  std::vector<double> data;

  BevGrid() = default;
  BevGrid(const GridSpec& spec, int channels, int layer = 0);

  std::size_t cell_offset(int h, int w) const {
    return (static_cast<std::size_t>(h) * spec.W + static_cast<std::size_t>(w)) *
           static_cast<std::size_t>(channels);
  }
  std::span<double> cell(int h, int w) {
    return {data.data() + cell_offset(h, w), static_cast<std::size_t>(channels)};
  }
  std::span<const double> cell(int h, int w) const {
    return {data.data() + cell_offset(h, w), static_cast<std::size_t>(channels)};
  }
  double at(int h, int w, int c) const { return data[cell_offset(h, w) + c]; }
  double& at(int h, int w, int c) { return data[cell_offset(h, w) + c]; }

  void validate() const;
};

inline constexpr int kPyramidLevels = 3;

struct BevPyramid {
  std::array<BevGrid, kPyramidLevels> layers;

  // Same metric extent, halving resolution and non-increasing channels.
  void validate() const;
};

// Four-node interpolation footprint around a point in grid coordinates,
// with the weights' derivatives w.r.t. the point.
struct BilinearStencil {
  bool inside = false;
  std::array<std::int64_t, 4> node{};  // h * W + w
  std::array<double, 4> weight{};
  std::array<double, 4> dweight_du{};
  std::array<double, 4> dweight_dv{};
};

// Points outside [0, H-1] x [0, W-1] are marked outside (zero contribution).
inline BilinearStencil bilinear_stencil(const GridSpec& spec, double u, double v) {
  BilinearStencil s;
  if (!(u >= 0.0 && u <= spec.H - 1 && v >= 0.0 && v <= spec.W - 1)) return s;
  s.inside = true;
  int i0 = static_cast<int>(std::floor(u));
  int j0 = static_cast<int>(std::floor(v));
  i0 = std::min(i0, std::max(spec.H - 2, 0));
  j0 = std::min(j0, std::max(spec.W - 2, 0));
  const int i1 = spec.H > 1 ? i0 + 1 : i0;
  const int j1 = spec.W > 1 ? j0 + 1 : j0;
  const double fu = spec.H > 1 ? u - i0 : 0.0;
  const double fv = spec.W > 1 ? v - j0 : 0.0;
  const double gu = spec.H > 1 ? 1.0 : 0.0;
  const double gv = spec.W > 1 ? 1.0 : 0.0;
  const std::int64_t W = spec.W;
  s.node = {i0 * W + j0, i0 * W + j1, i1 * W + j0, i1 * W + j1};
  s.weight = {(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv};
  s.dweight_du = {-gu * (1 - fv), -gu * fv, gu * (1 - fv), gu * fv};
  s.dweight_dv = {-gv * (1 - fu), gv * (1 - fu), -gv * fu, gv * fu};
  return s;
}

// Accumulates scale * sample(point) into `out` (size C).
inline void accumulate_bilinear(const BevGrid& grid, const BilinearStencil& s,
                                double scale, std::span<double> out) {
  if (!s.inside) return;
  const std::size_t C = static_cast<std::size_t>(grid.channels);
  for (int k = 0; k < 4; ++k) {
    const double w = scale * s.weight[static_cast<std::size_t>(k)];
    if (w == 0.0) continue;
    const double* cell = grid.data.data() + static_cast<std::size_t>(s.node[static_cast<std::size_t>(k)]) * C;
    for (std::size_t c = 0; c < C; ++c) out[c] += w * cell[c];
  }
}

// Throws ArgumentError for non-finite points.
void bilinear_sample(const BevGrid& grid, const Eigen::Vector2d& point,
                     std::span<double> out);
std::vector<double> bilinear_sample(const BevGrid& grid,
                                    const Eigen::Vector2d& point);

// Bilinear sampling of a grid held in any scalar type at a point of any
// scalar type; used where the grid values themselves are differentiated.
template <class TG, class TP>
auto bilinear_sample_generic(const GridSpec& spec, int channels,
                             std::span<const TG> data, const TP& u, const TP& v) {
  using R = decltype(std::declval<TG>() * std::declval<TP>());
  std::vector<R> out(static_cast<std::size_t>(channels), R(0.0));
  const double uu = value_of(u);
  const double vv = value_of(v);
  if (!(uu >= 0.0 && uu <= spec.H - 1 && vv >= 0.0 && vv <= spec.W - 1)) return out;
  const int i0 = std::min(static_cast<int>(std::floor(uu)), std::max(spec.H - 2, 0));
  const int j0 = std::min(static_cast<int>(std::floor(vv)), std::max(spec.W - 2, 0));
  const int i1 = spec.H > 1 ? i0 + 1 : i0;
  const int j1 = spec.W > 1 ? j0 + 1 : j0;
  const TP fu = spec.H > 1 ? u - static_cast<double>(i0) : TP(0.0);
  const TP fv = spec.W > 1 ? v - static_cast<double>(j0) : TP(0.0);
  const std::array<std::pair<int, int>, 4> nodes = {
      std::pair{i0, j0}, std::pair{i0, j1}, std::pair{i1, j0}, std::pair{i1, j1}};
  const std::array<TP, 4> weights = {(1.0 - fu) * (1.0 - fv), (1.0 - fu) * fv,
                                     fu * (1.0 - fv), fu * fv};
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t base =
        (static_cast<std::size_t>(nodes[k].first) * spec.W + nodes[k].second) *
        static_cast<std::size_t>(channels);
    for (int c = 0; c < channels; ++c) {
      out[static_cast<std::size_t>(c)] =
          out[static_cast<std::size_t>(c)] + data[base + c] * weights[k];
    }
  }
  return out;
}

// Sinusoidal encoding: the first C/2 channels encode the row index, the
// rest the column index, alternating sin/cos over geometric frequencies.
BevGrid positional_encoding_2d(const GridSpec& spec, int channels);

// Binary occupancy of one semantic type, row-major H x W.
struct SemanticMask {
  GridSpec spec;
  std::vector<std::uint8_t> cells;

  bool operator==(const SemanticMask&) const = default;
  int count() const;
};

// Cell index of a grid point under the node-centered convention, or -1.
inline std::int64_t cell_index(const GridSpec& spec, const Eigen::Vector2d& p) {
  const double hu = std::floor(p.x() + 0.5);
  const double wv = std::floor(p.y() + 0.5);
  if (!(hu >= 0.0 && hu < spec.H && wv >= 0.0 && wv < spec.W)) return -1;
  return static_cast<std::int64_t>(hu) * spec.W + static_cast<std::int64_t>(wv);
}

// Half-cell spacing, so rasterized segments are connected.
SegmentSampling raster_sampling(const GridSpec& spec);

// Marks every cell containing a densified element point projected with
// `gt_pose`. All elements must share one semantic type.
SemanticMask rasterize_semantic_gt(std::span<const MapElement> elements,
                                   const Pose6& gt_pose, const GridSpec& spec);
SemanticMask rasterize_semantic_gt(std::span<const MapElement> elements,
                                   const Pose6& gt_pose, const GridSpec& spec,
                                   const SegmentSampling& sampling);

// Per-type masks for a mixed element list.
std::array<SemanticMask, kNumSemanticTypes> rasterize_all_types(
    std::span<const MapElement> elements, const Pose6& gt_pose,
    const GridSpec& spec);

// 2x bilinear upsampling (edge nodes replicated) followed by a channel
// projection of shape out_channels x C.
BevGrid upsample_layer(const BevGrid& grid, const Eigen::MatrixXd& projection);
// Keeps the first out_channels channels.
BevGrid upsample_layer(const BevGrid& grid, int out_channels);

BevPyramid build_pyramid(const BevGrid& layer0, const Eigen::MatrixXd& proj1,
                         const Eigen::MatrixXd& proj2);

// Header line (JSON) followed by raw little-endian float64 values.
void write_grid_dump(const BevGrid& grid, const std::filesystem::path& path);
BevGrid read_grid_dump(const std::filesystem::path& path);

}  // namespace vecloc

#endif  // VECLOC_BEV_GRID_HPP_
