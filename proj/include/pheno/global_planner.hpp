#pragma once

#include "pheno/core.hpp"
#include "pheno/farm_map.hpp"
#include "pheno/terrain.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pheno::global_planner {

/// Node id used for the robot start position in a GlobalPath.
inline constexpr int kStartNode = -1;

enum class DistanceMetric { kEuclidean, kGraph };

struct PlannerConfig {
  int cover_min_corners = 4;
  double max_heading_change = kPi / 3.0;
  terrain::TraversabilityGate gate;
  DistanceMetric metric = DistanceMetric::kEuclidean;
};

struct Subgroup {
  int group_id = 0;
  std::vector<int> target_instance_ids;
};

struct AuditEntry {
  int step = 0;
  int tail_node = kStartNode;
  Vec2 tail_position = Vec2::Zero();
  std::vector<std::pair<int, double>> distances;  // (group id, distance) of every remaining subgroup
  int chosen_group = 0;
};

struct GlobalPath {
  Vec2 start = Vec2::Zero();
  std::vector<int> node_ids;  // begins with kStartNode
  std::vector<int> covered_instances;
  std::vector<int> unreachable_instances;
  double total_length = 0.0;
  std::vector<AuditEntry> audit;

  int tail() const { return node_ids.empty() ? kStartNode : node_ids.back(); }
};

/// Everything the planner reads; all members are borrowed and must outlive it.
struct PlanningContext {
  const farm_map::GraphMap* graph = nullptr;
  const terrain::TraversabilityGrid* terrain = nullptr;
  PlannerConfig config;
  Vec2 start = Vec2::Zero();

  Vec2 position(int node_id) const;
};

int find_parent(int instance_id, const farm_map::GraphMap& g);

/// Tail-to-subgroup distance: closest node of any of the subgroup's targets.
double subgroup_distance(const Vec2& tail, int tail_node, const Subgroup& v, const PlanningContext& ctx);

Subgroup find_nearest_subgroup(const GlobalPath& path, const std::vector<Subgroup>& subgroups,
                               const PlanningContext& ctx);

/// Heading change between two nodes is at most `max_change` (inclusive).
bool orientation_feasible(const farm_map::PlanningNode& a, const farm_map::PlanningNode& b,
                          double max_change = kPi / 3.0);

/// True when the path visits at least `min_corners` distinct corner indices of the instance.
bool is_fully_covered(const std::vector<int>& node_ids, int instance_id, const farm_map::GraphMap& g,
                      int min_corners = 4);

struct Connection {
  std::vector<int> appended;
  std::vector<int> covered;
  std::vector<int> unreachable;
};

/// Appends nearest feasible nodes until every target of `v` is covered or
/// reported unreachable. `path` is the global path so far.
Connection plan_connection(const GlobalPath& path, const Subgroup& v, const PlanningContext& ctx);

GlobalPath generate_global_path(const std::vector<int>& targets, const PlanningContext& ctx);

/// Length of the polyline through the path's nodes.
double path_length(const std::vector<int>& node_ids, const PlanningContext& ctx);

std::string plan_to_json(const GlobalPath& path, const PlanningContext& ctx);
std::string audit_to_jsonl(const GlobalPath& path);

}  // namespace pheno::global_planner
