#include "pheno/global_planner.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <queue>
#include <set>
#include <tuple>

namespace pheno::global_planner {

using farm_map::GraphMap;
using farm_map::PlanningNode;
using nlohmann::json;

Vec2 PlanningContext::position(int node_id) const {
  return node_id == kStartNode ? start : graph->node(node_id).position;
}

int find_parent(int instance_id, const GraphMap& g) {
  for (const auto& row : g.groups) {
    if (std::find(row.instance_ids.begin(), row.instance_ids.end(), instance_id) != row.instance_ids.end()) {
      return row.id;
    }
  }
  throw PreconditionError("unknown instance " + std::to_string(instance_id));
}

bool orientation_feasible(const PlanningNode& a, const PlanningNode& b, double max_change) {
  return std::abs(wrap_angle(a.heading - b.heading)) <= max_change + 1e-12;
}

bool is_fully_covered(const std::vector<int>& node_ids, int instance_id, const GraphMap& g, int min_corners) {
  std::array<bool, 4> seen{};
  for (int id : node_ids) {
    if (id == kStartNode) continue;
    const PlanningNode& n = g.node(id);
    if (n.instance_id == instance_id && n.corner_index) seen[static_cast<std::size_t>(*n.corner_index)] = true;
  }
  return std::count(seen.begin(), seen.end(), true) >= min_corners;
}

double path_length(const std::vector<int>& node_ids, const PlanningContext& ctx) {
  double len = 0.0;
  for (std::size_t k = 1; k < node_ids.size(); ++k) {
    len += (ctx.position(node_ids[k]) - ctx.position(node_ids[k - 1])).norm();
  }
  return len;
}

namespace {

/// Shortest graph distances from a node, or from the start position when the
/// tail is not a graph node (the start is linked straight to every node).
std::vector<double> graph_distances(int tail_node, const PlanningContext& ctx, std::vector<int>* parent = nullptr) {
  const GraphMap& g = *ctx.graph;
  const auto adj = g.adjacency();
  std::vector<double> dist(g.nodes.size(), kInf);
  if (parent) parent->assign(g.nodes.size(), -2);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  if (tail_node == kStartNode) {
    for (const auto& n : g.nodes) {
      if (!ctx.config.gate.passes(*ctx.terrain, ctx.start, n.position)) continue;
      dist[static_cast<std::size_t>(n.id)] = (n.position - ctx.start).norm();
      if (parent) (*parent)[static_cast<std::size_t>(n.id)] = kStartNode;
      pq.emplace(dist[static_cast<std::size_t>(n.id)], n.id);
    }
  } else {
    dist[static_cast<std::size_t>(tail_node)] = 0.0;
    if (parent) (*parent)[static_cast<std::size_t>(tail_node)] = -2;
    pq.emplace(0.0, tail_node);
  }
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    for (const auto& [v, w] : adj[static_cast<std::size_t>(u)]) {
      const double nd = d + w;
      if (nd < dist[static_cast<std::size_t>(v)]) {
        dist[static_cast<std::size_t>(v)] = nd;
        if (parent) (*parent)[static_cast<std::size_t>(v)] = u;
        pq.emplace(nd, v);
      }
    }
  }
  return dist;
}

double angle_between(const Vec2& dir, double heading) {
  return std::abs(wrap_angle(std::atan2(dir.y(), dir.x()) - heading));
}

const farm_map::RowGroup& group_of_node(const PlanningNode& n, const GraphMap& g) {
  return g.groups.at(static_cast<std::size_t>(find_parent(*n.instance_id, g)));
}

bool same_side(const PlanningNode& a, const PlanningNode& b, const farm_map::RowGroup& row) {
  const Vec2 normal(-row.axis_direction.y(), row.axis_direction.x());
  return ((a.position - row.line_point).dot(normal) > 0) == ((b.position - row.line_point).dot(normal) > 0);
}

/// Both feasibility gates for a direct hop from `from` to an instance node.
bool hop_feasible(int from, const PlanningNode& to, const PlanningContext& ctx) {
  const double max_turn = ctx.config.max_heading_change;
  const Vec2 from_pos = ctx.position(from);
  const Vec2 d = to.position - from_pos;
  const bool moving = d.norm() > 1e-9;
  if (from != kStartNode) {
    const PlanningNode& f = ctx.graph->node(from);
    if (!f.is_access()) {
      if (!orientation_feasible(f, to, max_turn)) return false;
      if (moving && angle_between(d, f.heading) > max_turn + 1e-12) return false;
      if (group_of_node(f, *ctx.graph).id == group_of_node(to, *ctx.graph).id &&
          !same_side(f, to, group_of_node(to, *ctx.graph))) {
        return false;
      }
    }
  }
  if (moving && angle_between(d, to.heading) > max_turn + 1e-12) return false;
  return ctx.config.gate.passes(*ctx.terrain, from_pos, to.position);
}

/// Nodes to append to reach `target` from `from` (excluding `from`, including `target`).
std::optional<std::vector<int>> route_to(int from, int target, const PlanningContext& ctx) {
  if (from == target) return std::vector<int>{};
  const Vec2 a = ctx.position(from), b = ctx.position(target);
  bool forward_ok = true;
  if (from != kStartNode) {
    const PlanningNode& f = ctx.graph->node(from);
    if (!f.is_access() && (b - a).norm() > 1e-9) {
      forward_ok = angle_between(b - a, f.heading) <= ctx.config.max_heading_change + 1e-12;
    }
  }
  if (forward_ok && ctx.config.gate.passes(*ctx.terrain, a, b)) return std::vector<int>{target};
  std::vector<int> parent;
  const auto dist = graph_distances(from, ctx, &parent);
  if (!std::isfinite(dist[static_cast<std::size_t>(target)])) return std::nullopt;
  std::vector<int> route;
  for (int v = target; v != from && v != kStartNode && v != -2; v = parent[static_cast<std::size_t>(v)]) {
    route.push_back(v);
  }
  std::reverse(route.begin(), route.end());
  return route;
}

/// Walk from an access node along the flank chain of `target` (same row, side
/// and direction), entering at the chain end behind the target.
std::optional<std::vector<int>> corridor_route(int access, int target, const PlanningContext& ctx) {
  const GraphMap& g = *ctx.graph;
  const PlanningNode& t = g.node(target);
  const auto& row = group_of_node(t, g);
  const std::set<int> members(row.instance_ids.begin(), row.instance_ids.end());
  const Vec2 dir = unit_from_angle(t.heading);
  std::vector<int> chain;
  for (const auto& n : g.nodes) {
    if (!n.instance_id || !members.count(*n.instance_id) || n.direction_index != t.direction_index) continue;
    if (!same_side(n, t, row)) continue;
    if (n.position.dot(dir) > t.position.dot(dir) || (n.position.dot(dir) == t.position.dot(dir) && n.id > t.id)) continue;
    chain.push_back(n.id);
  }
  std::sort(chain.begin(), chain.end(), [&](int a, int b) {
    const double pa = g.node(a).position.dot(dir), pb = g.node(b).position.dot(dir);
    return pa != pb ? pa < pb : a < b;
  });
  if (chain.empty()) return std::nullopt;
  // Fewest-hop forward walk along the chain; intermediate nodes may be skipped.
  const std::size_t n = chain.size();
  std::vector<int> prev(n, -2);
  std::vector<std::size_t> frontier;
  for (std::size_t k = 0; k < n; ++k)
    if (hop_feasible(access, g.node(chain[k]), ctx)) {
      prev[k] = -1;
      frontier.push_back(k);
    }
  while (!frontier.empty() && prev[n - 1] == -2) {
    std::vector<std::size_t> next;
    for (std::size_t a : frontier)
      for (std::size_t b = a + 1; b < n; ++b)
        if (prev[b] == -2 && hop_feasible(chain[a], g.node(chain[b]), ctx)) {
          prev[b] = static_cast<int>(a);
          next.push_back(b);
        }
    frontier = std::move(next);
  }
  if (prev[n - 1] == -2) return std::nullopt;
  std::vector<int> walk;
  for (int k = static_cast<int>(n) - 1; k >= 0; k = prev[static_cast<std::size_t>(k)]) walk.push_back(chain[static_cast<std::size_t>(k)]);
  std::reverse(walk.begin(), walk.end());
  return walk;
}

struct Candidate {
  double distance;
  double deviation;
  int node;
};

std::vector<Candidate> candidates_from(int from, const std::vector<int>& pending, const std::map<int, std::array<bool, 4>>& corners,
                                       const PlanningContext& ctx) {
  const Vec2 p = ctx.position(from);
  std::vector<Candidate> out;
  for (int t : pending) {
    for (int id : ctx.graph->nodes_of(t)) {
      const PlanningNode& n = ctx.graph->node(id);
      if (corners.at(t)[static_cast<std::size_t>(*n.corner_index)]) continue;
      const Vec2 d = n.position - p;
      const double dev = d.norm() > 1e-9 ? angle_between(d, n.heading) : 0.0;
      out.push_back({d.norm(), dev, id});
    }
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.distance, a.deviation, a.node) < std::tie(b.distance, b.deviation, b.node);
  });
  return out;
}

}  // namespace

double subgroup_distance(const Vec2& tail, int tail_node, const Subgroup& v, const PlanningContext& ctx) {
  double best = kInf;
  if (ctx.config.metric == DistanceMetric::kGraph) {
    const auto dist = graph_distances(tail_node, ctx);
    for (int t : v.target_instance_ids) {
      for (int id : ctx.graph->nodes_of(t)) best = std::min(best, dist[static_cast<std::size_t>(id)]);
    }
    return best;
  }
  for (int t : v.target_instance_ids) {
    for (int id : ctx.graph->nodes_of(t)) best = std::min(best, (ctx.graph->node(id).position - tail).norm());
  }
  return best;
}

Subgroup find_nearest_subgroup(const GlobalPath& path, const std::vector<Subgroup>& subgroups,
                               const PlanningContext& ctx) {
  if (subgroups.empty()) throw PreconditionError("find_nearest_subgroup needs a non-empty subgroup set");
  const int tail = path.tail();
  const Vec2 tail_pos = ctx.position(tail);
  const Subgroup* best = nullptr;
  double best_d = kInf;
  for (const auto& v : subgroups) {
    const double d = subgroup_distance(tail_pos, tail, v, ctx);
    if (!best || d < best_d || (d == best_d && v.group_id < best->group_id)) {
      best = &v;
      best_d = d;
    }
  }
  return *best;
}

Connection plan_connection(const GlobalPath& path, const Subgroup& v, const PlanningContext& ctx) {
  if (v.target_instance_ids.empty()) throw PreconditionError("plan_connection needs a non-empty subgroup");
  const GraphMap& g = *ctx.graph;
  const auto& row = g.groups.at(static_cast<std::size_t>(v.group_id));

  std::map<int, std::array<bool, 4>> corners;
  for (int t : v.target_instance_ids) corners[t] = {};
  auto mark = [&](int id) {
    if (id == kStartNode) return;
    const PlanningNode& n = g.node(id);
    if (n.instance_id && corners.count(*n.instance_id)) corners[*n.instance_id][static_cast<std::size_t>(*n.corner_index)] = true;
  };
  for (int id : path.node_ids) mark(id);

  Connection out;
  std::vector<int> pending;
  auto refresh = [&] {
    pending.clear();
    for (int t : v.target_instance_ids) {
      if (std::find(out.covered.begin(), out.covered.end(), t) != out.covered.end()) continue;
      const auto& c = corners[t];
      if (std::count(c.begin(), c.end(), true) >= ctx.config.cover_min_corners) {
        out.covered.push_back(t);
        continue;
      }
      pending.push_back(t);
    }
  };
  refresh();

  int tail = path.tail();
  while (!pending.empty()) {
    std::vector<int> step;
    for (const auto& c : candidates_from(tail, pending, corners, ctx)) {
      if (hop_feasible(tail, g.node(c.node), ctx)) {
        step = {c.node};
        break;
      }
    }
    if (step.empty()) {
      // Recover through the row's access nodes; the one ahead of the robot first.
      std::vector<int> access{row.left_access.id, row.right_access.id};
      const Vec2 tp = ctx.position(tail);
      auto ahead = [&](int a) {
        if (tail == kStartNode || g.node(tail).is_access()) return true;
        const Vec2 d = g.node(a).position - tp;
        return d.norm() < 1e-9 || angle_between(d, g.node(tail).heading) <= ctx.config.max_heading_change + 1e-12;
      };
      std::stable_sort(access.begin(), access.end(), [&](int a, int b) {
        return std::make_tuple(!ahead(a), (g.node(a).position - tp).norm(), a) <
               std::make_tuple(!ahead(b), (g.node(b).position - tp).norm(), b);
      });
      for (int a : access) {
        if (a == tail) continue;
        const auto route = route_to(tail, a, ctx);
        if (!route) continue;
        bool found = false;
        for (const auto& c : candidates_from(a, pending, corners, ctx)) {
          if (hop_feasible(a, g.node(c.node), ctx)) {
            step = *route;
            step.push_back(c.node);
            found = true;
            break;
          }
        }
        // Nearest target node ahead along a corridor, passing the plants in between.
        if (!found) {
          for (const auto& c : candidates_from(a, pending, corners, ctx)) {
            if (auto walk = corridor_route(a, c.node, ctx)) {
              step = *route;
              step.insert(step.end(), walk->begin(), walk->end());
              found = true;
              break;
            }
          }
        }
        if (found) break;
      }
    }
    if (step.empty()) {
      out.unreachable.insert(out.unreachable.end(), pending.begin(), pending.end());
      break;
    }
    for (int id : step) {
      out.appended.push_back(id);
      mark(id);
    }
    tail = step.back();
    refresh();
  }
  std::sort(out.covered.begin(), out.covered.end());
  std::sort(out.unreachable.begin(), out.unreachable.end());
  return out;
}

GlobalPath generate_global_path(const std::vector<int>& targets, const PlanningContext& ctx) {
  if (!ctx.start.allFinite()) throw PreconditionError("start position must be finite");
  const GraphMap& g = *ctx.graph;
  GlobalPath path;
  path.start = ctx.start;
  path.node_ids = {kStartNode};

  std::map<int, Subgroup> by_group;
  for (int t : targets) {
    const int gid = find_parent(t, g);
    auto& sg = by_group[gid];
    sg.group_id = gid;
    if (std::find(sg.target_instance_ids.begin(), sg.target_instance_ids.end(), t) == sg.target_instance_ids.end()) {
      sg.target_instance_ids.push_back(t);
    }
  }
  std::vector<Subgroup> remaining;
  for (auto& [gid, sg] : by_group) {
    std::sort(sg.target_instance_ids.begin(), sg.target_instance_ids.end());
    remaining.push_back(sg);
  }

  int step = 0;
  while (!remaining.empty()) {
    AuditEntry audit;
    audit.step = step++;
    audit.tail_node = path.tail();
    audit.tail_position = ctx.position(path.tail());
    for (const auto& v : remaining) {
      audit.distances.emplace_back(v.group_id, subgroup_distance(audit.tail_position, audit.tail_node, v, ctx));
    }
    const Subgroup chosen = find_nearest_subgroup(path, remaining, ctx);
    audit.chosen_group = chosen.group_id;
    path.audit.push_back(audit);

    const Connection c = plan_connection(path, chosen, ctx);
    path.node_ids.insert(path.node_ids.end(), c.appended.begin(), c.appended.end());
    path.covered_instances.insert(path.covered_instances.end(), c.covered.begin(), c.covered.end());
    path.unreachable_instances.insert(path.unreachable_instances.end(), c.unreachable.begin(), c.unreachable.end());
    std::erase_if(remaining, [&](const Subgroup& v) { return v.group_id == chosen.group_id; });
  }
  std::sort(path.covered_instances.begin(), path.covered_instances.end());
  std::sort(path.unreachable_instances.begin(), path.unreachable_instances.end());
  path.total_length = path_length(path.node_ids, ctx);
  return path;
}

std::string plan_to_json(const GlobalPath& path, const PlanningContext& ctx) {
  json nodes = json::array();
  for (int id : path.node_ids) {
    const Vec2 p = ctx.position(id);
    json n = {{"id", id}, {"x", p.x()}, {"y", p.y()}};
    n["heading"] = id == kStartNode ? json(nullptr) : json(ctx.graph->node(id).heading);
    nodes.push_back(n);
  }
  json doc = {{"nodes", nodes},
              {"covered", path.covered_instances},
              {"unreachable", path.unreachable_instances},
              {"length_m", path.total_length},
              {"start", {path.start.x(), path.start.y()}}};
  return doc.dump(2);
}

std::string audit_to_jsonl(const GlobalPath& path) {
  std::string out;
  for (const auto& a : path.audit) {
    json d = json::array();
    for (const auto& [gid, dist] : a.distances) d.push_back({{"group", gid}, {"distance", dist}});
    json line = {{"step", a.step},
                 {"tail_node", a.tail_node},
                 {"tail", {a.tail_position.x(), a.tail_position.y()}},
                 {"subgroups", d},
                 {"chosen", a.chosen_group}};
    out += line.dump() + "\n";
  }
  return out;
}

}  // namespace pheno::global_planner
