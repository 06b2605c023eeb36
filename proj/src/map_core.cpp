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

#include "vecloc/map_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include "json.hpp"

#include "vecloc/errors.hpp"
#include "vecloc/text_format.hpp"

namespace vecloc {
namespace {

constexpr std::array<std::string_view, kNumSemanticTypes> kTypeTags = {
    "lane_line",   "road_boundary", "stop_line",     "pedestrian_crossing",
    "road_marking", "pole",         "traffic_sign",  "surfel",
};

bool segment_intersects_box(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                            const Box2& box) {
  // Liang-Barsky clipping.
  double t0 = 0.0;
  double t1 = 1.0;
  const Eigen::Vector2d d = b - a;
  for (int axis = 0; axis < 2; ++axis) {
    const double p[2] = {-d[axis], d[axis]};
    const double q[2] = {a[axis] - box.min[axis], box.max[axis] - a[axis]};
    for (int k = 0; k < 2; ++k) {
      if (p[k] == 0.0) {
        if (q[k] < 0.0) return false;
        continue;
      }
      const double r = q[k] / p[k];
      if (p[k] < 0.0) {
        t0 = std::max(t0, r);
      } else {
        t1 = std::min(t1, r);
      }
      if (t0 > t1) return false;
    }
  }
  return true;
}

}  // namespace

std::string_view to_string(SemanticType type) {
  return kTypeTags.at(static_cast<std::size_t>(index_of(type)));
}

SemanticType semantic_type_from_string(std::string_view tag) {
  for (int i = 0; i < kNumSemanticTypes; ++i) {
    if (kTypeTags[static_cast<std::size_t>(i)] == tag) {
      return static_cast<SemanticType>(i);
    }
  }
  throw ParseError(fmt::format("unknown semantic type '{}'", tag));
}

GeometryKind geometry_kind(SemanticType type) {
  switch (type) {
    case SemanticType::kPole:
    case SemanticType::kTrafficSign:
      return GeometryKind::kVertical;
    case SemanticType::kSurfel:
      return GeometryKind::kSurfel;
    default:
      return GeometryKind::kSegment;
  }
}

MapElement MapElement::segment(std::int64_t id, SemanticType sem,
                               const Eigen::Vector2d& start,
                               const Eigen::Vector2d& end) {
  MapElement e;
  e.id = id;
  e.sem = sem;
  e.geom = {start.x(), start.y(), end.x(), end.y(), 0, 0, 0, 0};
  return e;
}

MapElement MapElement::vertical(std::int64_t id, SemanticType sem,
                                const Eigen::Vector2d& center, double height) {
  MapElement e;
  e.id = id;
  e.sem = sem;
  e.geom = {center.x(), center.y(), 0.0, height, 0, 0, 0, 0};
  return e;
}

MapElement MapElement::surfel(std::int64_t id, const Eigen::Vector2d& center,
                              const Eigen::Vector3d& normal,
                              const Eigen::Vector2d& ratios) {
  MapElement e;
  e.id = id;
  e.sem = SemanticType::kSurfel;
  e.geom = {center.x(), center.y(), normal.x(), normal.y(),
            normal.z(), ratios.x(), ratios.y(), 0.0};
  return e;
}

void validate(const MapElement& element) {
  auto fail = [&](std::string_view what) {
    throw ValidationError(fmt::format("element {}: {}", element.id, what));
  };
  for (double v : element.geom) {
    if (!std::isfinite(v)) fail("non-finite geometry");
  }
  switch (element.kind()) {
    case GeometryKind::kSegment:
      for (int i = 4; i < 8; ++i) {
        if (element.geom[static_cast<std::size_t>(i)] != 0.0) {
          fail("segment descriptor padding must be zero");
        }
      }
      break;
    case GeometryKind::kVertical:
      if (!(element.height() > 0.0)) fail("height must be positive");
      if (element.geom[2] != 0.0) fail("vertical descriptor slot 2 must be 0");
      break;
    case GeometryKind::kSurfel: {
      if (std::abs(element.normal().norm() - 1.0) > 1e-9) {
        fail("surfel normal must be unit length");
      }
      const double r1 = element.geom[5];
      const double r2 = element.geom[6];
      if (!(r1 > 0.0 && r1 <= 1.0 && r2 > 0.0 && r2 <= 1.0)) {
        fail("surfel eigenvalue ratios must lie in (0, 1]");
      }
      break;
    }
  }
}

Box2 element_bounds(const MapElement& element) {
  Box2 box;
  box.min = box.max = element.anchor();
  if (element.kind() == GeometryKind::kSegment) {
    box.min = box.min.cwiseMin(element.end());
    box.max = box.max.cwiseMax(element.end());
  }
  return box;
}

void VectorMap::update_bounds() {
  if (elements.empty()) {
    bounds = Box2{};
    return;
  }
  bounds = element_bounds(elements.front());
  for (const MapElement& e : elements) {
    const Box2 b = element_bounds(e);
    bounds.min = bounds.min.cwiseMin(b.min);
    bounds.max = bounds.max.cwiseMax(b.max);
  }
}

void validate(const VectorMap& map) {
  std::set<std::int64_t> ids;
  for (const MapElement& e : map.elements) {
    validate(e);
    if (!ids.insert(e.id).second) {
      throw ValidationError(fmt::format("element {}: duplicate id", e.id));
    }
    const Box2 b = element_bounds(e);
    if (!map.bounds.contains(b.min) || !map.bounds.contains(b.max)) {
      throw ValidationError(
          fmt::format("element {}: outside the map bounding box", e.id));
    }
  }
}

std::string serialize_map(const VectorMap& map) {
  std::string out = fmt::format(
      "{{\"format\":\"vecloc-map\",\"version\":{},\"origin\":[{},{}],"
      "\"bbox\":[{},{},{},{}],\"count\":{}}}\n",
      map.version, format_real(map.origin.x()), format_real(map.origin.y()),
      format_real(map.bounds.min.x()), format_real(map.bounds.min.y()),
      format_real(map.bounds.max.x()), format_real(map.bounds.max.y()),
      map.elements.size());
  for (const MapElement& e : map.elements) {
    out += fmt::format("{{\"id\":{},\"type\":\"{}\",\"geom\":[", e.id,
                       to_string(e.sem));
    for (std::size_t i = 0; i < e.geom.size(); ++i) {
      if (i != 0) out += ',';
      out += format_real(e.geom[i]);
    }
    out += "]}\n";
  }
  return out;
}

VectorMap parse_map(std::string_view text) {
  VectorMap map;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool have_header = false;
  std::int64_t declared_count = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(fmt::format("line {}: {}", line_no, e.what()));
    }
    try {
      if (!have_header) {
        if (record.value("format", std::string()) != "vecloc-map") {
          throw ParseError(fmt::format("line {}: missing map header", line_no));
        }
        map.version = record.at("version").get<int>();
        if (map.version != VectorMap::kFormatVersion) {
          throw ParseError(fmt::format("line {}: unsupported map version {}",
                                       line_no, map.version));
        }
        const auto origin = record.at("origin").get<std::vector<double>>();
        const auto bbox = record.at("bbox").get<std::vector<double>>();
        if (origin.size() != 2 || bbox.size() != 4) {
          throw ParseError(fmt::format("line {}: bad origin/bbox", line_no));
        }
        map.origin = {origin[0], origin[1]};
        map.bounds.min = {bbox[0], bbox[1]};
        map.bounds.max = {bbox[2], bbox[3]};
        declared_count = record.value("count", std::int64_t{-1});
        have_header = true;
        continue;
      }
      MapElement e;
      e.sem = semantic_type_from_string(record.at("type").get<std::string>());
      const auto geom = record.at("geom").get<std::vector<double>>();
      if (geom.size() != e.geom.size()) {
        throw ParseError(fmt::format("line {}: geom must have 8 numbers",
                                     line_no));
      }
      std::copy(geom.begin(), geom.end(), e.geom.begin());
      const bool has_id = record.contains("id");
      e.id = has_id ? record.at("id").get<std::int64_t>()
                    : static_cast<std::int64_t>(map.elements.size());
      map.elements.push_back(e);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: {}", line_no, e.what()));
    } catch (const ParseError& e) {
      const std::string what = e.what();
      if (what.rfind("line ", 0) == 0) throw;
      throw ParseError(fmt::format("line {}: {}", line_no, what));
    }
  }
  if (!have_header) throw ParseError("line 1: missing map header");
  if (declared_count >= 0 &&
      declared_count != static_cast<std::int64_t>(map.elements.size())) {
    throw ParseError(fmt::format("header declares {} elements, found {}",
                                 declared_count, map.elements.size()));
  }
  validate(map);
  return map;
}

VectorMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open map file {}", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_map(buffer.str());
}

void save_map(const VectorMap& map, const std::filesystem::path& path) {
  validate(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write map file {}", path.string()));
  const std::string text = serialize_map(map);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

bool intersects_window(const MapElement& element, const Box2& window) {
  if (element.kind() == GeometryKind::kSegment) {
    return segment_intersects_box(element.anchor(), element.end(), window);
  }
  return window.contains(element.anchor());
}

std::vector<MapElement> query_window(const VectorMap& map,
                                     const Eigen::Vector2d& center,
                                     const Eigen::Vector2d& half_extent) {
  if (!(half_extent.x() > 0.0 && half_extent.y() > 0.0)) {
    throw ArgumentError("query_window: half extent must be positive");
  }
  const Box2 window{center - half_extent, center + half_extent};
  std::vector<MapElement> out;
  for (const MapElement& e : map.elements) {
    if (intersects_window(e, window)) out.push_back(e);
  }
  return out;
}

SpatialIndex::SpatialIndex(const VectorMap& map, double bucket_size)
    : map_(&map), bucket_size_(bucket_size) {
  if (!(bucket_size > 0.0)) throw ArgumentError("bucket size must be positive");
  Box2 bounds = map.bounds;
  if (!map.elements.empty()) {
    bounds = element_bounds(map.elements.front());
    for (const MapElement& e : map.elements) {
      const Box2 b = element_bounds(e);
      bounds.min = bounds.min.cwiseMin(b.min);
      bounds.max = bounds.max.cwiseMax(b.max);
    }
  }
  lower_ = bounds.min;
  cols_ = static_cast<int>(std::floor((bounds.max.x() - lower_.x()) / bucket_size_)) + 1;
  rows_ = static_cast<int>(std::floor((bounds.max.y() - lower_.y()) / bucket_size_)) + 1;
  buckets_.resize(static_cast<std::size_t>(cols_) * static_cast<std::size_t>(rows_));
  for (int i = 0; i < static_cast<int>(map.elements.size()); ++i) {
    const Box2 b = element_bounds(map.elements[static_cast<std::size_t>(i)]);
    const int c0 = static_cast<int>(std::floor((b.min.x() - lower_.x()) / bucket_size_));
    const int c1 = static_cast<int>(std::floor((b.max.x() - lower_.x()) / bucket_size_));
    const int r0 = static_cast<int>(std::floor((b.min.y() - lower_.y()) / bucket_size_));
    const int r1 = static_cast<int>(std::floor((b.max.y() - lower_.y()) / bucket_size_));
    for (int c = c0; c <= c1; ++c) {
      for (int r = r0; r <= r1; ++r) {
        buckets_[static_cast<std::size_t>(r * cols_ + c)].push_back(i);
      }
    }
  }
}

std::vector<MapElement> SpatialIndex::query(
    const Eigen::Vector2d& center, const Eigen::Vector2d& half_extent) const {
  if (!(half_extent.x() > 0.0 && half_extent.y() > 0.0)) {
    throw ArgumentError("query: half extent must be positive");
  }
  const Box2 window{center - half_extent, center + half_extent};
  auto clamp_col = [&](double x) {
    return std::clamp(static_cast<int>(std::floor((x - lower_.x()) / bucket_size_)), 0, cols_ - 1);
  };
  auto clamp_row = [&](double y) {
    return std::clamp(static_cast<int>(std::floor((y - lower_.y()) / bucket_size_)), 0, rows_ - 1);
  };
  std::vector<int> hits;
  if (window.max.x() >= lower_.x() && window.max.y() >= lower_.y()) {
    for (int c = clamp_col(window.min.x()); c <= clamp_col(window.max.x()); ++c) {
      for (int r = clamp_row(window.min.y()); r <= clamp_row(window.max.y()); ++r) {
        for (int i : buckets_[static_cast<std::size_t>(r * cols_ + c)]) {
          if (intersects_window(map_->elements[static_cast<std::size_t>(i)], window)) {
            hits.push_back(i);
          }
        }
      }
    }
  }
  std::sort(hits.begin(), hits.end());
  hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
  std::vector<MapElement> out;
  out.reserve(hits.size());
  for (int i : hits) out.push_back(map_->elements[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<MapElement> filter_surfels(std::span<const MapElement> surfels) {
  std::map<std::pair<std::int64_t, std::int64_t>, const MapElement*> best;
  for (const MapElement& s : surfels) {
    if (s.sem != SemanticType::kSurfel) {
      throw ArgumentError(
          fmt::format("filter_surfels: element {} is not a surfel", s.id));
    }
    if (s.planarity() > kSurfelPlanarityThreshold) continue;
    const std::pair<std::int64_t, std::int64_t> cell{
        static_cast<std::int64_t>(std::floor(s.geom[0] / kSurfelCellSize)),
        static_cast<std::int64_t>(std::floor(s.geom[1] / kSurfelCellSize))};
    auto [it, inserted] = best.try_emplace(cell, &s);
    if (inserted) continue;
    const MapElement& kept = *it->second;
    if (std::tie(s.geom[5], s.id) < std::tie(kept.geom[5], kept.id)) {
      it->second = &s;
    }
  }
  std::vector<MapElement> out;
  out.reserve(best.size());
  for (const auto& [cell, s] : best) out.push_back(*s);
  std::sort(out.begin(), out.end(),
            [](const MapElement& a, const MapElement& b) { return a.id < b.id; });
  return out;
}

double map_size_report(const VectorMap& map, double road_length_km) {
  if (!(road_length_km > 0.0) || !std::isfinite(road_length_km)) {
    throw ArgumentError("map_size_report: road length must be positive");
  }
  return static_cast<double>(serialize_map(map).size()) / road_length_km;
}

}  // namespace vecloc
