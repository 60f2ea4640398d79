#pragma once

#include "pheno/core.hpp"
#include "pheno/terrain.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pheno::farm_map {

struct Instance {
  int id = 0;
  Vec2 center = Vec2::Zero();
  Vec2 half_extents = Vec2::Ones();
  double yaw = 0.0;
  double height = 0.0;

  void validate() const;
  /// Corners of the oriented box inflated by `inflation` along each local axis (CCW from (-,-)).
  std::array<Vec2, 4> corners(double inflation = 0.0) const;
  /// True when p is strictly inside the box inflated by `inflation` per axis.
  bool strictly_contains(const Vec2& p, double inflation = 0.0) const;
};

struct PlanningNode {
  int id = 0;
  std::optional<int> instance_id;  // empty for access nodes
  Vec2 position = Vec2::Zero();
  double heading = 0.0;
  std::optional<int> corner_index;
  std::optional<int> direction_index;

  bool is_access() const { return !instance_id.has_value(); }
};

struct RowGroup {
  int id = 0;
  std::vector<int> instance_ids;  // ordered along axis_direction
  PlanningNode left_access;
  PlanningNode right_access;
  Vec2 axis_direction = Vec2::UnitX();
  Vec2 line_point = Vec2::Zero();  // a point on the fitted row line
};

struct Edge {
  int a = 0;
  int b = 0;
  double length = 0.0;
};

struct GraphMap {
  std::vector<Instance> instances;
  std::vector<PlanningNode> nodes;  // nodes[i].id == i
  std::vector<RowGroup> groups;
  std::vector<Edge> edges;
  std::vector<std::vector<int>> components;  // node ids per connected component

  const Instance& instance(int id) const;
  const PlanningNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
  /// Neighbours of every node, by node id.
  std::vector<std::vector<std::pair<int, double>>> adjacency() const;
  /// The eight planning nodes of an instance, ordered by corner then direction.
  std::vector<int> nodes_of(int instance_id) const;
  bool connected() const { return components.size() <= 1; }
};

/// Parses the detections JSON text (array of {id, center, half_extents, yaw, height}).
std::vector<Instance> parse_detections(const std::string& text);
std::vector<Instance> load_detections(const std::filesystem::path& path);
std::string detections_to_json(const std::vector<Instance>& instances);

/// Outward diagonal offset of each corner node; the node then sits on the
/// corner of the box inflated by clearance / sqrt(2) per axis.
inline double node_inflation(double clearance) { return clearance / std::sqrt(2.0); }

/// Eight nodes (4 corners x 2 directions). Headings follow `axis` (defaults to
/// the box's own x axis); direction 1 is direction 0 reversed. Node ids start
/// at `first_id`.
std::vector<PlanningNode> generate_nodes(const Instance& inst, double clearance,
                                         std::optional<Vec2> axis = std::nullopt, int first_id = 0);

struct RowConfig {
  double lateral_tolerance = 0.75;
  double row_margin = 1.5;
  double clearance = 0.6;
  Vec2 default_axis = Vec2::UnitX();
  int max_refinements = 10;
};

std::vector<RowGroup> detect_rows(const std::vector<Instance>& instances, const RowConfig& cfg);

struct GraphConfig {
  RowConfig rows;
  terrain::TraversabilityGate gate;
};

GraphMap build_graph(const std::vector<Instance>& instances, const std::vector<RowGroup>& groups,
                     const terrain::TraversabilityGrid& terrain, const GraphConfig& cfg);

std::string graph_to_json(const GraphMap& g);

}  // namespace pheno::farm_map
