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

#ifndef VECLOC_MAP_CORE_HPP_
#define VECLOC_MAP_CORE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace vecloc {

enum class SemanticType : int {
  kLaneLine = 0,
  kRoadBoundary,
  kStopLine,
  kPedestrianCrossing,
  kRoadMarking,
  kPole,
  kTrafficSign,
  kSurfel,
};

inline constexpr int kNumSemanticTypes = 8;

inline constexpr std::array<SemanticType, kNumSemanticTypes> kAllSemanticTypes = {
    SemanticType::kLaneLine,     SemanticType::kRoadBoundary,
    SemanticType::kStopLine,     SemanticType::kPedestrianCrossing,
    SemanticType::kRoadMarking,  SemanticType::kPole,
    SemanticType::kTrafficSign,  SemanticType::kSurfel,
};

constexpr int index_of(SemanticType type) { return static_cast<int>(type); }

std::string_view to_string(SemanticType type);
// Throws ParseError for unknown tags.
SemanticType semantic_type_from_string(std::string_view tag);

enum class GeometryKind { kSegment, kVertical, kSurfel };

GeometryKind geometry_kind(SemanticType type);

// Canonical 8-slot geometry descriptor.
//   segment : (x_s, y_s, x_e, y_e, 0, 0, 0, 0)
//   vertical: (x, y, 0, h, 0, 0, 0, 0)
//   surfel  : (p_x, p_y, n_x, n_y, n_z, l1/l2, l1/l3, 0)
inline constexpr int kGeometrySlots = 8;
using GeometryDescriptor = std::array<double, kGeometrySlots>;

struct MapElement {
  std::int64_t id = 0;
  SemanticType sem = SemanticType::kLaneLine;
  GeometryDescriptor geom{};

  static MapElement segment(std::int64_t id, SemanticType sem,
                            const Eigen::Vector2d& start,
                            const Eigen::Vector2d& end);
  static MapElement vertical(std::int64_t id, SemanticType sem,
                             const Eigen::Vector2d& center, double height);
  static MapElement surfel(std::int64_t id, const Eigen::Vector2d& center,
                           const Eigen::Vector3d& normal,
                           const Eigen::Vector2d& ratios);

  GeometryKind kind() const { return geometry_kind(sem); }

  // First endpoint for segments, the center point otherwise.
  Eigen::Vector2d anchor() const { return {geom[0], geom[1]}; }
  Eigen::Vector2d end() const { return {geom[2], geom[3]}; }
  double height() const { return geom[3]; }
  Eigen::Vector3d normal() const { return {geom[2], geom[3], geom[4]}; }
  // lambda1 / lambda2
  double planarity() const { return geom[5]; }

  bool operator==(const MapElement&) const = default;
};

// Throws ValidationError naming the element id.
void validate(const MapElement& element);

struct Box2 {
  Eigen::Vector2d min = Eigen::Vector2d::Zero();
  Eigen::Vector2d max = Eigen::Vector2d::Zero();

  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() &&
           p.y() <= max.y();
  }
  bool operator==(const Box2&) const = default;
};

// Bounding box of the element's planar geometry.
Box2 element_bounds(const MapElement& element);

struct VectorMap {
  static constexpr int kFormatVersion = 1;

  std::vector<MapElement> elements;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  Box2 bounds;
  int version = kFormatVersion;

  // Recomputes `bounds` from the element geometry.
  void update_bounds();

  bool operator==(const VectorMap&) const = default;
};

// Unique ids, valid elements, bounds covering all geometry.
void validate(const VectorMap& map);

// Line-delimited JSON: one header record, then one record per element.
std::string serialize_map(const VectorMap& map);
VectorMap parse_map(std::string_view text);

VectorMap load_map(const std::filesystem::path& path);
void save_map(const VectorMap& map, const std::filesystem::path& path);

// Elements whose geometry intersects the closed axis-aligned window.
std::vector<MapElement> query_window(const VectorMap& map,
                                     const Eigen::Vector2d& center,
                                     const Eigen::Vector2d& half_extent);

bool intersects_window(const MapElement& element, const Box2& window);

// Uniform bucket grid over a map for repeated window queries.
class SpatialIndex {
 public:
  explicit SpatialIndex(const VectorMap& map, double bucket_size = 50.0);

  std::vector<MapElement> query(const Eigen::Vector2d& center,
                                const Eigen::Vector2d& half_extent) const;

 private:
  const VectorMap* map_;
  double bucket_size_;
  Eigen::Vector2d lower_;
  int cols_ = 0;
  int rows_ = 0;
  std::vector<std::vector<int>> buckets_;
};

inline constexpr double kSurfelPlanarityThreshold = 0.1;
inline constexpr double kSurfelCellSize = 1.0;

// Drops surfels with l1/l2 above the threshold, then keeps the single
// flattest surfel in each 1 m world cell (lowest id on ties). Output is
// sorted by id.
std::vector<MapElement> filter_surfels(std::span<const MapElement> surfels);

// Serialized size divided by the road length.
double map_size_report(const VectorMap& map, double road_length_km);

}  // namespace vecloc

#endif  // VECLOC_MAP_CORE_HPP_
