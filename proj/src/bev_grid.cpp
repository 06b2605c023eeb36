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

#include "vecloc/bev_grid.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "vecloc/errors.hpp"

namespace vecloc {

BevGrid::BevGrid(const GridSpec& spec_in, int channels_in, int layer_in)
    : spec(spec_in), channels(channels_in), layer(layer_in) {
  spec.validate();
  if (channels <= 0) throw ArgumentError("BevGrid: channel count must be positive");
  data.assign(static_cast<std::size_t>(spec.H) * spec.W * channels, 0.0);
}

void BevGrid::validate() const {
  spec.validate();
  if (data.size() != static_cast<std::size_t>(spec.H) * spec.W * channels) {
    throw ValidationError("BevGrid: data length does not match H * W * C");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw ValidationError("BevGrid: non-finite value");
  }
}

void BevPyramid::validate() const {
  for (int l = 0; l < kPyramidLevels; ++l) {
    const BevGrid& g = layers[static_cast<std::size_t>(l)];
    g.validate();
    const BevGrid& base = layers[0];
    const GridSpec expected = base.spec.refined(l);
    if (g.spec.H != expected.H || g.spec.W != expected.W ||
        std::abs(g.spec.resolution - expected.resolution) > 1e-12 ||
        std::abs(g.spec.h_min - base.spec.h_min) > 1e-9 ||
        std::abs(g.spec.w_min - base.spec.w_min) > 1e-9) {
      throw ValidationError(fmt::format("pyramid layer {} has the wrong geometry", l));
    }
    if (l > 0 && g.channels > layers[static_cast<std::size_t>(l - 1)].channels) {
      throw ValidationError("pyramid channel counts must be non-increasing");
    }
  }
}

void bilinear_sample(const BevGrid& grid, const Eigen::Vector2d& point,
                     std::span<double> out) {
  if (!point.allFinite()) throw ArgumentError("bilinear_sample: non-finite point");
  std::fill(out.begin(), out.end(), 0.0);
  accumulate_bilinear(grid, bilinear_stencil(grid.spec, point.x(), point.y()), 1.0, out);
}

std::vector<double> bilinear_sample(const BevGrid& grid, const Eigen::Vector2d& point) {
  std::vector<double> out(static_cast<std::size_t>(grid.channels), 0.0);
  bilinear_sample(grid, point, out);
  return out;
}

BevGrid positional_encoding_2d(const GridSpec& spec, int channels) {
  if (channels <= 0 || channels % 2 != 0) {
    throw ArgumentError("positional_encoding_2d: channel count must be even");
  }
  BevGrid grid(spec, channels);
  const int half = channels / 2;
  std::vector<double> freq(static_cast<std::size_t>(half));
  for (int c = 0; c < half; ++c) {
    const int k = c / 2;
    freq[static_cast<std::size_t>(c)] = std::pow(10000.0, -2.0 * k / half);
  }
  for (int h = 0; h < spec.H; ++h) {
    for (int w = 0; w < spec.W; ++w) {
      auto cell = grid.cell(h, w);
      for (int c = 0; c < half; ++c) {
        const double f = freq[static_cast<std::size_t>(c)];
        const bool use_sin = c % 2 == 0;
        cell[static_cast<std::size_t>(c)] = use_sin ? std::sin(h * f) : std::cos(h * f);
        cell[static_cast<std::size_t>(half + c)] =
            use_sin ? std::sin(w * f) : std::cos(w * f);
      }
    }
  }
  return grid;
}

int SemanticMask::count() const {
  int n = 0;
  for (std::uint8_t c : cells) n += c;
  return n;
}

SegmentSampling raster_sampling(const GridSpec& spec) {
  return SegmentSampling::spacing(0.5 * spec.resolution);
}

SemanticMask rasterize_semantic_gt(std::span<const MapElement> elements,
                                   const Pose6& gt_pose, const GridSpec& spec) {
  return rasterize_semantic_gt(elements, gt_pose, spec, raster_sampling(spec));
}

SemanticMask rasterize_semantic_gt(std::span<const MapElement> elements,
                                   const Pose6& gt_pose, const GridSpec& spec,
                                   const SegmentSampling& sampling) {
  spec.validate();
  for (const MapElement& e : elements) {
    if (e.sem != elements.front().sem) {
      throw ArgumentError("rasterize_semantic_gt: mixed semantic types");
    }
  }
  SemanticMask mask{spec, std::vector<std::uint8_t>(
                              static_cast<std::size_t>(spec.H) * spec.W, 0)};
  for (const auto& points : project_elements(gt_pose, elements, spec, sampling)) {
    for (const Eigen::Vector2d& p : points) {
      const std::int64_t idx = cell_index(spec, p);
      if (idx >= 0) mask.cells[static_cast<std::size_t>(idx)] = 1;
    }
  }
  return mask;
}

std::array<SemanticMask, kNumSemanticTypes> rasterize_all_types(
    std::span<const MapElement> elements, const Pose6& gt_pose,
    const GridSpec& spec) {
  std::array<std::vector<MapElement>, kNumSemanticTypes> by_type;
  for (const MapElement& e : elements) {
    by_type[static_cast<std::size_t>(index_of(e.sem))].push_back(e);
  }
  std::array<SemanticMask, kNumSemanticTypes> masks;
  for (int j = 0; j < kNumSemanticTypes; ++j) {
    masks[static_cast<std::size_t>(j)] =
        rasterize_semantic_gt(by_type[static_cast<std::size_t>(j)], gt_pose, spec);
  }
  return masks;
}

BevGrid upsample_layer(const BevGrid& grid, const Eigen::MatrixXd& projection) {
  if (projection.cols() != grid.channels || projection.rows() <= 0 ||
      projection.rows() > grid.channels) {
    throw ArgumentError("upsample_layer: projection must be out x C with out <= C");
  }
  const GridSpec out_spec = grid.spec.refined(1);
  BevGrid out(out_spec, static_cast<int>(projection.rows()), grid.layer + 1);
  const int C = grid.channels;
  std::vector<double> interp(static_cast<std::size_t>(C));
  for (int h = 0; h < out_spec.H; ++h) {
    const double u = std::min(0.5 * h, static_cast<double>(grid.spec.H - 1));
    for (int w = 0; w < out_spec.W; ++w) {
      const double v = std::min(0.5 * w, static_cast<double>(grid.spec.W - 1));
      std::fill(interp.begin(), interp.end(), 0.0);
      accumulate_bilinear(grid, bilinear_stencil(grid.spec, u, v), 1.0, interp);
      const Eigen::Map<const Eigen::VectorXd> x(interp.data(), C);
      Eigen::Map<Eigen::VectorXd> y(out.cell(h, w).data(), out.channels);
      y = projection * x;
    }
  }
  return out;
}

BevGrid upsample_layer(const BevGrid& grid, int out_channels) {
  if (out_channels <= 0 || out_channels > grid.channels) {
    throw ArgumentError("upsample_layer: out_channels must be in [1, C]");
  }
  return upsample_layer(grid, Eigen::MatrixXd::Identity(out_channels, grid.channels));
}

BevPyramid build_pyramid(const BevGrid& layer0, const Eigen::MatrixXd& proj1,
                         const Eigen::MatrixXd& proj2) {
  BevPyramid pyramid;
  pyramid.layers[0] = layer0;
  pyramid.layers[0].layer = 0;
  pyramid.layers[1] = upsample_layer(layer0, proj1);
  pyramid.layers[2] = upsample_layer(pyramid.layers[1], proj2);
  return pyramid;
}

void write_grid_dump(const BevGrid& grid, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little,
                "grid dumps assume a little-endian host");
  const nlohmann::json header = {
      {"format", "vecloc-grid"}, {"version", 1},
      {"H", grid.spec.H},        {"W", grid.spec.W},
      {"C", grid.channels},      {"layer", grid.layer},
      {"resolution", grid.spec.resolution},
      {"h_min", grid.spec.h_min}, {"w_min", grid.spec.w_min}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write grid dump {}", path.string()));
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.write(reinterpret_cast<const char*>(grid.data.data()),
            static_cast<std::streamsize>(grid.data.size() * sizeof(double)));
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

BevGrid read_grid_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open grid dump {}", path.string()));
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != "vecloc-grid") throw ParseError("line 1: not a grid dump");
    GridSpec spec;
    spec.H = header.at("H").get<int>();
    spec.W = header.at("W").get<int>();
    spec.resolution = header.at("resolution").get<double>();
    spec.h_min = header.at("h_min").get<double>();
    spec.w_min = header.at("w_min").get<double>();
    BevGrid grid(spec, header.at("C").get<int>(), header.at("layer").get<int>());
    in.read(reinterpret_cast<char*>(grid.data.data()),
            static_cast<std::streamsize>(grid.data.size() * sizeof(double)));
    if (!in) throw ParseError("grid dump truncated");
    return grid;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("line 1: {}", e.what()));
  }
}

}  // namespace vecloc
