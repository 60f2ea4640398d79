#include "pheno/global_planner.hpp"

#include <doctest.h>
#include <json.hpp>

#include <functional>
#include <random>
#include <sstream>

using namespace pheno;
using namespace pheno::farm_map;
using namespace pheno::global_planner;

namespace {

Instance box(int id, Vec2 c, Vec2 h = Vec2(0.4, 0.4)) {
  Instance i;
  i.id = id;
  i.center = c;
  i.half_extents = h;
  i.height = 1.0;
  return i;
}

GraphMap make_graph(const std::vector<Instance>& v, const terrain::TraversabilityGrid& grid) {
  GraphConfig cfg;
  return build_graph(v, detect_rows(v, cfg.rows), grid, cfg);
}

PlanningContext context(const GraphMap& g, const terrain::TraversabilityGrid& grid, Vec2 start) {
  PlanningContext ctx;
  ctx.graph = &g;
  ctx.terrain = &grid;
  ctx.start = start;
  return ctx;
}

int find_node(const GraphMap& g, int inst, int corner, int dir) {
  for (const auto& n : g.nodes)
    if (n.instance_id == inst && n.corner_index == corner && n.direction_index == dir) return n.id;
  return -1;
}

double wrapped(double a) { return std::abs(std::remainder(a, 2 * kPi)); }

// Hop rules restated for the oracles: heading continuity and forward travel
// for instance nodes, same flank within a row, free straight segment.
bool oracle_hop(const PlanningContext& ctx, int from, int to) {
  const GraphMap& g = *ctx.graph;
  const Vec2 a = ctx.position(from), b = g.node(to).position;
  const Vec2 d = b - a;
  const double lim = kPi / 3 + 1e-12;
  auto dev = [&](double h) { return d.norm() < 1e-9 ? 0.0 : wrapped(std::atan2(d.y(), d.x()) - h); };
  const PlanningNode& t = g.node(to);
  if (from != kStartNode && !g.node(from).is_access()) {
    const PlanningNode& f = g.node(from);
    if (dev(f.heading) > lim) return false;
    if (!t.is_access()) {
      if (wrapped(f.heading - t.heading) > lim) return false;
      const int gf = find_parent(*f.instance_id, g), gt = find_parent(*t.instance_id, g);
      if (gf == gt) {
        const auto& row = g.groups[static_cast<std::size_t>(gt)];
        const Vec2 n(-row.axis_direction.y(), row.axis_direction.x());
        if (((f.position - row.line_point).dot(n) > 0) != ((t.position - row.line_point).dot(n) > 0)) return false;
      }
    }
  }
  if (!t.is_access() && dev(t.heading) > lim) return false;
  for (const auto& [ix, iy] : ctx.terrain->cells_on_segment(a, b)) {
    if (!ctx.terrain->in_bounds(ix, iy) || ctx.terrain->upsilon(ix, iy) >= 2.0) return false;
  }
  return true;
}

int corners_seen(const std::vector<int>& ids, int inst, const GraphMap& g) {
  std::set<int> s;
  for (int id : ids)
    if (id != kStartNode && g.node(id).instance_id == inst) s.insert(*g.node(id).corner_index);
  return static_cast<int>(s.size());
}

}  // namespace

TEST_CASE("find_parent looks up the owning row") {
  const auto grid = terrain::TraversabilityGrid::flat({-5, -5}, 0.1, 150, 150);
  const GraphMap g = make_graph({box(3, {0, 0}), box(4, {2, 0}), box(5, {0, 6})}, grid);
  const int g3 = find_parent(3, g);
  CHECK(find_parent(4, g) == g3);
  const int g5 = find_parent(5, g);
  CHECK(g5 != g3);
  CHECK(g.groups[static_cast<std::size_t>(g5)].instance_ids == std::vector<int>{5});
  CHECK_THROWS_AS(find_parent(99, g), PreconditionError);
}

TEST_CASE("orientation gate is inclusive at pi/3") {
  PlanningNode a, b;
  a.heading = 0.0;
  b.heading = kPi / 4;
  CHECK(orientation_feasible(a, b));
  b.heading = kPi / 2;
  CHECK_FALSE(orientation_feasible(a, b));
  b.heading = kPi / 3;
  CHECK(orientation_feasible(a, b));
  a.heading = kPi - 0.1;
  b.heading = -kPi + 0.1;
  CHECK(orientation_feasible(a, b));
}

TEST_CASE("is_fully_covered counts distinct corner indices") {
  const auto grid = terrain::TraversabilityGrid::flat({-5, -5}, 0.1, 100, 100);
  const GraphMap g = make_graph({box(1, {0, 0})}, grid);
  std::vector<int> dir0, three, mixed;
  for (int c = 0; c < 4; ++c) dir0.push_back(find_node(g, 1, c, 0));
  for (int c = 0; c < 3; ++c) three.push_back(find_node(g, 1, c, 0));
  for (int c = 0; c < 4; ++c) mixed.push_back(find_node(g, 1, c, c % 2));
  CHECK(is_fully_covered(dir0, 1, g));
  CHECK_FALSE(is_fully_covered(three, 1, g));
  CHECK(is_fully_covered(mixed, 1, g));
  CHECK(is_fully_covered(three, 1, g, 3));

  // Corner-index coverage oracle over every subset of the 8 nodes.
  const auto all = g.nodes_of(1);
  for (unsigned mask = 0; mask < 256; ++mask) {
    std::vector<int> sel{kStartNode};
    std::set<int> corners;
    for (int k = 0; k < 8; ++k) {
      if (mask & (1u << k)) {
        sel.push_back(all[static_cast<std::size_t>(k)]);
        corners.insert(*g.node(all[static_cast<std::size_t>(k)]).corner_index);
      }
    }
    CHECK(is_fully_covered(sel, 1, g) == (corners.size() == 4));
  }
}

TEST_CASE("find_nearest_subgroup picks the smallest tail distance, ties to the lower id") {
  const auto grid = terrain::TraversabilityGrid::flat({-20, -20}, 0.2, 200, 200);
  // Instances 1 and 2 are in different rows (y = 0 and y = 4).
  const GraphMap g = make_graph({box(1, {5, 0}), box(2, {5, 4})}, grid);
  PlanningContext ctx = context(g, grid, {5, 2});
  GlobalPath path;
  path.node_ids = {kStartNode};
  const Subgroup a{find_parent(1, g), {1}}, b{find_parent(2, g), {2}};

  // Exhaustive scan oracle.
  auto scan = [&](const Subgroup& v) {
    double d = kInf;
    for (const auto& n : g.nodes)
      if (n.instance_id && std::count(v.target_instance_ids.begin(), v.target_instance_ids.end(), *n.instance_id))
        d = std::min(d, (n.position - ctx.start).norm());
    return d;
  };

  CHECK(scan(a) == doctest::Approx(scan(b)));
  CHECK(find_nearest_subgroup(path, {b, a}, ctx).group_id == std::min(a.group_id, b.group_id));

  const double top = 0.4 + node_inflation(0.6);
  ctx.start = {5 - top, -top - 5};  // straight below the lower-left corner nodes
  CHECK(subgroup_distance(ctx.start, kStartNode, a, ctx) == doctest::Approx(5.0));
  CHECK(subgroup_distance(ctx.start, kStartNode, b, ctx) == doctest::Approx(9.0));
  CHECK(scan(a) == doctest::Approx(5.0));
  CHECK(scan(b) == doctest::Approx(9.0));
  CHECK(find_nearest_subgroup(path, {b, a}, ctx).group_id == a.group_id);
  CHECK(find_nearest_subgroup(path, {b}, ctx).group_id == b.group_id);
  CHECK_THROWS_AS(find_nearest_subgroup(path, {}, ctx), PreconditionError);
}

TEST_CASE("empty target set leaves only the start") {
  const auto grid = terrain::TraversabilityGrid::flat({-5, -5}, 0.1, 100, 100);
  const GraphMap g = make_graph({box(1, {0, 0})}, grid);
  const auto p = generate_global_path({}, context(g, grid, {-3, 0}));
  CHECK(p.node_ids == std::vector<int>{kStartNode});
  CHECK(p.covered_instances.empty());
  CHECK(p.total_length == 0.0);
  CHECK(p.audit.empty());
}

TEST_CASE("a single target is swept along both flanks in corridor order") {
  const auto grid = terrain::TraversabilityGrid::flat({-5, -5}, 0.1, 100, 100);
  const GraphMap g = make_graph({box(1, {0, 0})}, grid);
  const auto ctx = context(g, grid, {-3, 0});
  const auto& row = g.groups[0];
  GlobalPath path;
  path.node_ids = {kStartNode};
  const auto c = plan_connection(path, {0, {1}}, ctx);
  // Lower flank eastward, turn at the right access node, upper flank westward.
  const std::vector<int> expected{find_node(g, 1, 0, 0), find_node(g, 1, 1, 0), row.right_access.id,
                                  find_node(g, 1, 2, 1), find_node(g, 1, 3, 1)};
  CHECK(c.appended == expected);
  CHECK(c.covered == std::vector<int>{1});
  CHECK(c.unreachable.empty());
  CHECK_THROWS_AS(plan_connection(path, {0, {}}, ctx), PreconditionError);
}

TEST_CASE("two targets in a row: greedy tour equals the brute-force shortest feasible tour") {
  const auto grid = terrain::TraversabilityGrid::flat({-6, -5}, 0.1, 140, 100);
  const GraphMap g = make_graph({box(1, {0, 0}), box(2, {2, 0})}, grid);
  const auto ctx = context(g, grid, {-3, 0});
  const auto p = generate_global_path({1, 2}, ctx);
  CHECK(p.covered_instances == std::vector<int>{1, 2});

  // Brute force over node visiting orders (no repeated nodes) under the hop rules.
  double best = kInf;
  std::vector<int> seq{kStartNode};
  std::vector<bool> used(g.nodes.size(), false);
  std::function<void(double)> dfs = [&](double len) {
    if (len >= best - 1e-12) return;
    if (corners_seen(seq, 1, g) == 4 && corners_seen(seq, 2, g) == 4) {
      best = len;
      return;
    }
    if (seq.size() > 12) return;
    for (const auto& n : g.nodes) {
      if (used[static_cast<std::size_t>(n.id)] || !oracle_hop(ctx, seq.back(), n.id)) continue;
      used[static_cast<std::size_t>(n.id)] = true;
      const double step = (n.position - ctx.position(seq.back())).norm();
      seq.push_back(n.id);
      dfs(len + step);
      seq.pop_back();
      used[static_cast<std::size_t>(n.id)] = false;
    }
  };
  dfs(0.0);
  REQUIRE(std::isfinite(best));
  CHECK(std::abs(p.total_length - best) < 1e-9);
  CHECK(std::abs(p.total_length - path_length(p.node_ids, ctx)) < 1e-9);
}

TEST_CASE("two rows with one target each: the nearer row is served first") {
  const auto grid = terrain::TraversabilityGrid::flat({-8, -8}, 0.1, 200, 220);
  const GraphMap g = make_graph({box(1, {0, 0}), box(2, {2, 0}), box(3, {0, 8}), box(4, {2, 8})}, grid);
  const int near_group = find_parent(3, g);
  const auto p = generate_global_path({2, 3}, context(g, grid, {-3, 9}));
  REQUIRE(p.audit.size() == 2);
  CHECK(p.audit[0].chosen_group == near_group);
  CHECK(p.covered_instances == std::vector<int>{2, 3});

  // Greedy-trace oracle: at each audit step the chosen subgroup has the
  // smallest recomputed distance from the logged tail position.
  for (const auto& a : p.audit) {
    double best = kInf;
    int best_group = -1;
    for (const auto& [gid, d] : a.distances) {
      const int inst = gid == near_group ? 3 : 2;
      double oracle = kInf;
      for (int id : g.nodes_of(inst)) oracle = std::min(oracle, (g.node(id).position - a.tail_position).norm());
      CHECK(std::abs(oracle - d) < 1e-12);
      if (oracle < best || (oracle == best && gid < best_group)) {
        best = oracle;
        best_group = gid;
      }
    }
    CHECK(a.chosen_group == best_group);
  }
  // The first instance node after the start belongs to the nearer target.
  CHECK(g.node(p.node_ids[1]).instance_id == 3);
}

TEST_CASE("a walled-in target is reported unreachable") {
  auto grid = terrain::TraversabilityGrid::flat({-6, -6}, 0.1, 160, 120);
  const GraphMap g0 = make_graph({box(1, {0, 0}), box(2, {6, 0})}, grid);
  // Ring of impassable cells around instance 2 and its access nodes' reach.
  for (int iy = 0; iy < grid.height(); ++iy) {
    for (int ix = 0; ix < grid.width(); ++ix) {
      const Vec2 c = grid.cell_center(ix, iy);
      const double r = (c - Vec2(6, 0)).lpNorm<Eigen::Infinity>();
      if (r > 1.4 && r < 1.7) grid.at(ix, iy).upsilon = kInf;
    }
  }
  const GraphMap g = make_graph({box(1, {0, 0}), box(2, {6, 0})}, grid);
  const auto p = generate_global_path({1, 2}, context(g, grid, {-3, 0}));
  CHECK(p.covered_instances == std::vector<int>{1});
  CHECK(p.unreachable_instances == std::vector<int>{2});
  CHECK(is_fully_covered(p.node_ids, 1, g));
  CHECK_FALSE(is_fully_covered(p.node_ids, 2, g));
  CHECK(g0.groups.size() == g.groups.size());
}

TEST_CASE("random farms: coverage soundness, orientation gate and audit replay") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> nrows(1, 3), nper(1, 5);
    const int rows = nrows(rng), per = nper(rng);
    std::vector<Instance> v;
    std::uniform_real_distribution<double> jit(-0.1, 0.1);
    for (int r = 0; r < rows; ++r)
      for (int k = 0; k < per; ++k) v.push_back(box(r * per + k, {2.0 * k + jit(rng), 4.0 * r + jit(rng)}));
    const auto grid = terrain::TraversabilityGrid::flat({-6, -6}, 0.1, 250, 240);
    const GraphMap g = make_graph(v, grid);
    std::vector<int> targets;
    std::bernoulli_distribution pick(0.6);
    for (const auto& i : v)
      if (pick(rng)) targets.push_back(i.id);
    const auto ctx = context(g, grid, {-3.5, -3.5});
    const auto p = generate_global_path(targets, ctx);

    CHECK(p.unreachable_instances.empty());
    CHECK(p.covered_instances.size() == targets.size());
    for (int t : p.covered_instances) CHECK(is_fully_covered(p.node_ids, t, g));
    for (std::size_t k = 2; k < p.node_ids.size(); ++k) {
      const auto& a = g.node(p.node_ids[k - 1]);
      const auto& b = g.node(p.node_ids[k]);
      if (a.is_access() || b.is_access()) continue;
      if (find_parent(*a.instance_id, g) != find_parent(*b.instance_id, g)) continue;
      CHECK(wrapped(a.heading - b.heading) <= kPi / 3 + 1e-12);
    }
    CHECK(std::abs(p.total_length - path_length(p.node_ids, ctx)) < 1e-9);
    for (const auto& a : p.audit) {
      for (const auto& [gid, d] : a.distances) {
        CHECK(d >= std::find_if(a.distances.begin(), a.distances.end(), [&](const auto& e) {
                     return e.first == a.chosen_group;
                   })->second);
      }
    }
    const auto again = generate_global_path(targets, ctx);
    CHECK(again.node_ids == p.node_ids);
  }
}

TEST_CASE("plan JSON and audit log") {
  const auto grid = terrain::TraversabilityGrid::flat({-5, -5}, 0.1, 100, 100);
  const GraphMap g = make_graph({box(1, {0, 0})}, grid);
  const auto ctx = context(g, grid, {-3, 0});
  const auto p = generate_global_path({1}, ctx);
  const auto j = nlohmann::json::parse(plan_to_json(p, ctx));
  CHECK(j["nodes"].size() == p.node_ids.size());
  CHECK(j["nodes"][0]["id"] == kStartNode);
  CHECK(j["nodes"][0]["heading"].is_null());
  CHECK(j["covered"] == nlohmann::json::array({1}));
  CHECK(j["unreachable"].empty());
  CHECK(j["length_m"].get<double>() == doctest::Approx(p.total_length));

  std::istringstream lines(audit_to_jsonl(p));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto a = nlohmann::json::parse(line);
    CHECK(a["step"] == n);
    CHECK(a.contains("chosen"));
    ++n;
  }
  CHECK(n == 1);
}
