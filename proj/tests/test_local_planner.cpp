#include "pheno/local_planner.hpp"

#include <doctest.h>
#include <json.hpp>

#include <queue>
#include <random>

using namespace pheno;
using namespace pheno::local_planner;

namespace {

Points2 points(std::initializer_list<Vec2> pts) {
  Points2 q(2, static_cast<Eigen::Index>(pts.size()));
  Eigen::Index i = 0;
  for (const auto& p : pts) q.col(i++) = p;
  return q;
}

terrain::ObstacleField square_field(Vec2 lo, double side) {
  terrain::ObstacleField f;
  f.polygons.push_back({{lo, lo + Vec2(side, 0), lo + Vec2(side, side), lo + Vec2(0, side)}});
  return f;
}

Points2 fd_gradient(const Points2& q, const ObjectiveContext& ctx, double h = 1e-6) {
  Points2 g = Points2::Zero(2, q.cols());
  for (Eigen::Index i = 1; i + 1 < q.cols(); ++i) {
    for (int d = 0; d < 2; ++d) {
      Points2 a = q, b = q;
      a(d, i) += h;
      b(d, i) -= h;
      g(d, i) = (objective(a, ctx).total - objective(b, ctx).total) / (2 * h);
    }
  }
  return g;
}

// Textbook de Boor evaluation for a non-rational clamped B-spline.
Vec2 de_boor(const Points2& ctrl, const std::vector<double>& t, int p, double x) {
  const int n = static_cast<int>(ctrl.cols());
  int k = p;
  while (k < n - 1 && x >= t[static_cast<std::size_t>(k + 1)]) ++k;
  std::vector<Vec2> d;
  for (int j = 0; j <= p; ++j) d.push_back(ctrl.col(j + k - p));
  for (int r = 1; r <= p; ++r) {
    for (int j = p; j >= r; --j) {
      const double lo = t[static_cast<std::size_t>(j + k - p)];
      const double hi = t[static_cast<std::size_t>(j + 1 + k - r)];
      const double alpha = hi == lo ? 0.0 : (x - lo) / (hi - lo);
      d[static_cast<std::size_t>(j)] = (1 - alpha) * d[static_cast<std::size_t>(j - 1)] + alpha * d[static_cast<std::size_t>(j)];
    }
  }
  return d[static_cast<std::size_t>(p)];
}

// Plain Dijkstra with the same move rules: 8-neighbour, no corner cutting,
// edge cost = length * (1 + w * mean risk of the two cells).
double dijkstra_cost(const terrain::TraversabilityGrid& g, std::pair<int, int> s, std::pair<int, int> t, double w,
                     double level) {
  const int W = g.width(), H = g.height();
  std::vector<double> dist(static_cast<std::size_t>(W * H), kInf);
  auto free_cell = [&](int x, int y) { return x >= 0 && y >= 0 && x < W && y < H && g.upsilon(x, y) < level; };
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[static_cast<std::size_t>(s.second * W + s.first)] = 0;
  pq.emplace(0.0, s.second * W + s.first);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    const int ux = u % W, uy = u / W;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if ((dx == 0 && dy == 0) || !free_cell(ux + dx, uy + dy)) continue;
        if (dx && dy && (!free_cell(ux + dx, uy) || !free_cell(ux, uy + dy))) continue;
        const double len = g.cell_size() * std::sqrt(double(dx * dx + dy * dy));
        const double c = len * (1 + w * 0.5 * (g.upsilon(ux, uy) + g.upsilon(ux + dx, uy + dy)));
        const int v = (uy + dy) * W + ux + dx;
        if (d + c < dist[static_cast<std::size_t>(v)]) {
          dist[static_cast<std::size_t>(v)] = d + c;
          pq.emplace(d + c, v);
        }
      }
  }
  return dist[static_cast<std::size_t>(t.second * W + t.first)];
}

}  // namespace

TEST_CASE("objective on hand fixtures") {
  ObjectiveContext ctx;
  ctx.alpha_s = 1.0;
  ctx.dt = 1.0;
  const Points2 line = points({{0, 0}, {1, 0}, {2, 0}});
  // Independent summation: (1^2 + 1^2) / 1.
  double oracle = 0;
  for (int i = 0; i < 2; ++i) oracle += (line.col(i + 1) - line.col(i)).squaredNorm() / 1.0;
  CHECK(objective(line, ctx).total == doctest::Approx(2.0));
  CHECK(objective(line, ctx).total == oracle);

  const Points2 same = points({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
  CHECK(objective(same, ctx).smooth == 0.0);

  ctx.alpha_o = 1.0;
  ctx.desired = line.middleCols(1, 1);
  CHECK(objective(line, ctx).view == 0.0);
  CHECK(functional_gradient_terms(line, ctx).view.norm() == 0.0);

  ctx.desired = points({{1, 0}, {2, 0}});
  CHECK_THROWS_AS(objective(line, ctx), PreconditionError);
  CHECK_THROWS_AS(objective(points({{0, 0}, {1, 0}}), ObjectiveContext{}), PreconditionError);
}

TEST_CASE("straight uniform trajectory has zero smoothness gradient") {
  Points2 q(2, 9);
  for (int i = 0; i < 9; ++i) q.col(i) = Vec2(0.5 * i, 0.25 * i);
  ObjectiveContext ctx;
  const auto g = functional_gradient_terms(q, ctx);
  CHECK(g.smooth.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.total.col(0).norm() == 0.0);
  CHECK(g.total.col(8).norm() == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  const auto field = square_field({1.0, -0.5}, 1.0);
  const terrain::ObstacleCostField cost(field, 0.8);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Points2 q(2, 8);
    for (int i = 0; i < 8; ++i) q.col(i) = Vec2(0.45 * i + u(rng), 1.2 * u(rng));
    // Keep interior points clear of polygon corners (cost gradient kinks there).
    bool near_corner = false;
    for (int i = 0; i < 8; ++i)
      for (const auto& v : field.polygons[0].vertices) near_corner |= (q.col(i) - v).norm() < 0.2;
    if (near_corner) continue;
    Points2 desired(2, 6);
    for (int i = 0; i < 6; ++i) desired.col(i) = q.col(i + 1) + Vec2(u(rng), u(rng));
    ObjectiveContext ctx;
    ctx.alpha_s = 1.0;
    ctx.alpha_c = 10.0;
    ctx.alpha_o = 2.0;
    ctx.cost = &cost;
    ctx.desired = desired;
    const Points2 g = functional_gradient(q, ctx);
    const Points2 fd = fd_gradient(q, ctx);
    CHECK((g - fd).norm() / std::max(fd.norm(), 1e-12) < 1e-4);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("discrete gradient approaches dt times the continuous form") {
  const int n = 400;
  Points2 q(2, n + 1);
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    q.col(i) = Vec2(t, 0.2 * std::sin(kPi * t));
  }
  ObjectiveContext ctx;
  ctx.alpha_o = 1.0;
  ctx.desired = q.middleCols(1, n - 1).array() + 0.1;
  const auto d = functional_gradient_terms(q, ctx);
  const auto c = continuous_functional_gradient(q, ctx);
  const double dt = 1.0 / n;
  for (int i = 1; i < n; ++i) {
    CHECK((d.smooth.col(i) - 2 * dt * c.smooth.col(i)).norm() < 1e-9);
    CHECK((d.view.col(i) - 2 * dt * c.view.col(i)).norm() < 1e-12);
  }
}

TEST_CASE("optimize leaves an optimal line in place") {
  Trajectory t;
  t.control = points({{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  OptimizerConfig cfg;
  cfg.alpha_c = cfg.alpha_o = 0.0;
  const auto r = optimize(t, cfg, ObjectiveContext::from(cfg));
  CHECK(r.iterations <= 2);
  CHECK(r.converged);
  CHECK((r.trajectory.control - t.control).norm() < 1e-15);
}

TEST_CASE("optimize straightens a zig-zag monotonically with pinned endpoints") {
  Trajectory t;
  t.control = Points2(2, 10);
  for (int i = 0; i < 10; ++i) t.control.col(i) = Vec2(i * 0.3, i % 2 ? 0.2 : -0.2);
  t.control.col(9).y() = 0.0;
  t.control.col(0).y() = 0.0;
  OptimizerConfig cfg;
  cfg.alpha_c = cfg.alpha_o = 0.0;
  cfg.learning_rate = 1e-2;
  cfg.max_iters = 500;
  const auto ctx = ObjectiveContext::from(cfg);
  const auto r = optimize(t, cfg, ctx);
  for (std::size_t k = 2; k < r.history.size(); ++k) CHECK(r.history[k] <= r.history[k - 1]);
  CHECK(r.history.back() < r.history.front());
  CHECK(r.trajectory.control.row(1).cwiseAbs().maxCoeff() < t.control.row(1).cwiseAbs().maxCoeff());
  CHECK(std::memcmp(r.trajectory.control.col(0).data(), t.control.col(0).data(), 2 * sizeof(double)) == 0);
  CHECK(std::memcmp(r.trajectory.control.col(9).data(), t.control.col(9).data(), 2 * sizeof(double)) == 0);
}

TEST_CASE("obstacle term pushes a threading path away") {
  const auto field = square_field({1.4, -0.3}, 0.6);
  const terrain::ObstacleCostField cost(field, 0.8);
  Trajectory t;
  t.control = resample_polyline({{0, 0.05}, {3.4, 0.05}}, 12);
  OptimizerConfig cfg;
  cfg.alpha_o = 0.0;
  cfg.max_iters = 400;
  const auto r = optimize(t, cfg, ObjectiveContext::from(cfg, &cost));
  auto min_sep = [&](const Points2& q) {
    double m = kInf;
    for (Eigen::Index i = 0; i < q.cols(); ++i) m = std::min(m, terrain::min_separation(q.col(i), field));
    return m;
  };
  CHECK(min_sep(r.trajectory.control) > min_sep(t.control));
}

TEST_CASE("optimize rejects invalid configs and reports divergence") {
  Trajectory t;
  t.control = points({{0, 0}, {1, 1}, {2, 0}});
  OptimizerConfig cfg;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(optimize(t, cfg, ObjectiveContext::from(cfg)), PreconditionError);
  cfg.learning_rate = 1e3;
  cfg.alpha_c = cfg.alpha_o = 0;
  try {
    optimize(t, cfg, ObjectiveContext::from(cfg));
    FAIL("expected divergence");
  } catch (const DivergedError& e) {
    CHECK(e.iteration() > 0);
  }
}

TEST_CASE("rational B-spline with unit weights matches de Boor") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Points2 c(2, 9);
  for (int i = 0; i < 9; ++i) c.col(i) = Vec2(u(rng), u(rng));
  for (int degree : {1, 2, 3}) {
    const auto knots = bspline::clamped_uniform_knots(9, degree);
    CHECK(knots.size() == static_cast<std::size_t>(9 + degree + 1));
    const std::vector<double> w(9, 1.0);
    for (int k = 0; k <= 1000; ++k) {
      const double x = k / 1000.0;
      const Vec2 a = bspline::evaluate_rational(c, w, knots, degree, x);
      CHECK((a - de_boor(c, knots, degree, x)).norm() < 1e-12);
    }
    CHECK((bspline::evaluate_rational(c, w, knots, degree, 0.0) - Vec2(c.col(0))).norm() < 1e-15);
    CHECK((bspline::evaluate_rational(c, w, knots, degree, 1.0) - Vec2(c.col(8))).norm() < 1e-12);
  }
}

TEST_CASE("weight scaling leaves the curve unchanged and samples stay in the span hull") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  Trajectory t;
  t.control = Points2(2, 7);
  for (int i = 0; i < 7; ++i) t.control.col(i) = Vec2(i, u(rng));
  bspline::Config cfg;
  for (int i = 0; i < 7; ++i) cfg.weights.push_back(u(rng));
  const auto a = bspline_parameterize(t, cfg);
  for (double& w : cfg.weights) w *= 3.7;
  const auto b = bspline_parameterize(t, cfg);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    CHECK((a.samples[k].point - b.samples[k].point).norm() < 1e-12);
    // Bounding box of the active control points of the span.
    const int s = a.samples[k].span;
    const Points2 act = t.control.middleCols(s - 3, 4);
    CHECK((a.samples[k].point.array() >= act.rowwise().minCoeff().array() - 1e-12).all());
    CHECK((a.samples[k].point.array() <= act.rowwise().maxCoeff().array() + 1e-12).all());
  }
}

TEST_CASE("constant control polygon gives a constant curve; invalid knots are rejected") {
  Trajectory t;
  t.control = Points2(2, 5);
  for (int i = 0; i < 5; ++i) t.control.col(i) = Vec2(1.5, -2.0);
  const auto c = bspline_parameterize(t, {});
  for (const auto& s : c.samples) CHECK((s.point - Vec2(1.5, -2.0)).norm() < 1e-15);

  bspline::Config bad;
  bad.knots = {0, 0, 0, 0, 0.5, 0.4, 1, 1, 1};  // decreasing
  CHECK_THROWS_AS(bspline_parameterize(t, bad), PreconditionError);
  bad.knots = {0, 0, 0, 0.2, 0.5, 0.7, 1, 1, 1};  // not clamped
  CHECK_THROWS_AS(bspline_parameterize(t, bad), PreconditionError);
  bad.knots = {0, 0, 0, 0, 1, 1, 1};  // wrong length
  CHECK_THROWS_AS(bspline_parameterize(t, bad), PreconditionError);
  bspline::Config neg;
  neg.weights = {1, 1, -1, 1, 1};
  CHECK_THROWS_AS(bspline_parameterize(t, neg), PreconditionError);
  t.control = Points2(2, 3);
  CHECK_THROWS_AS(bspline_parameterize(t, {}), PreconditionError);
}

TEST_CASE("time parameterization at transit and sampling speeds") {
  const std::vector<Vec2> s{{0, 0}, {0.25, 0}, {0.5, 0}, {1.0, 0}};
  CHECK(time_parameterize(s, 1.0).back() == doctest::Approx(1.0));
  CHECK(time_parameterize(s, 0.2).back() == doctest::Approx(5.0));
  CHECK(time_parameterize({{1, 1}, {1, 1}}, 1.0) == std::vector<double>{0.0});
  CHECK_THROWS_AS(time_parameterize(s, 0.0), PreconditionError);
}

TEST_CASE("A* on an empty grid is a straight line") {
  const auto grid = terrain::TraversabilityGrid::flat({-1, -1}, 0.1, 20, 80);
  const auto p = astar({0.05, 0.05}, {0.05, 5.05}, grid, {});
  CHECK(p.polyline.size() == 2);
  CHECK(polyline_length(p.polyline) == doctest::Approx(5.0));
  CHECK(p.cost == doctest::Approx(5.0));
}

TEST_CASE("A* through a wall gap matches a Dijkstra oracle") {
  auto grid = terrain::TraversabilityGrid::flat({0, 0}, 0.1, 40, 40);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> risk(0.0, 0.6);
  for (int iy = 0; iy < 40; ++iy)
    for (int ix = 0; ix < 40; ++ix) grid.at(ix, iy).upsilon = risk(rng);
  for (int iy = 0; iy < 40; ++iy)
    if (iy != 31) grid.at(20, iy).upsilon = kInf;
  TransitConfig cfg;
  const Vec2 a(0.55, 0.55), b(3.55, 0.55);
  const auto p = astar(a, b, grid, cfg);
  const double oracle = dijkstra_cost(grid, {5, 5}, {35, 5}, cfg.cost_weight, cfg.obstacle_level);
  CHECK(std::abs(p.cost - oracle) < 1e-9);
  CHECK(std::find(p.cells.begin(), p.cells.end(), std::make_pair(20, 31)) != p.cells.end());
  double recomputed = 0;
  for (std::size_t k = 1; k < p.cells.size(); ++k) recomputed += grid_move_cost(grid, p.cells[k - 1], p.cells[k], cfg);
  CHECK(recomputed == doctest::Approx(p.cost));

  grid.at(20, 31).upsilon = kInf;
  CHECK_THROWS_AS(astar(a, b, grid, cfg), UnreachableError);
  grid.at(35, 5).upsilon = kInf;
  CHECK_THROWS_AS(astar(a, b, grid, cfg), UnreachableError);
}

TEST_CASE("viewpoint paths: straight in free space, detour around an obstacle") {
  farm_map::Instance inst;
  inst.id = 4;
  farm_map::PlanningNode a, b;
  a.instance_id = b.instance_id = 4;
  a.position = {0, 0};
  b.position = {4, 0};
  ViewpointConfig cfg;
  cfg.n_views = 3;
  const auto free_path = initial_path_viewpoints(a, b, inst, {}, cfg);
  CHECK(free_path.viewpoints.size() == 3);
  CHECK(free_path.polyline.size() == 5);
  CHECK((free_path.viewpoints[1] - Vec2(2, 0)).norm() < 1e-12);

  // Obstacle between viewpoints 1 (x = 1) and 2 (x = 2).
  const auto field = square_field({1.3, -0.3}, 0.4);
  const auto p = initial_path_viewpoints(a, b, inst, field, cfg);
  CHECK(p.polyline.size() > 5);
  for (const auto& v : p.viewpoints) {
    double best = kInf;
    for (const auto& q : p.polyline) best = std::min(best, (q - v).norm());
    CHECK(best <= cfg.view_tol);
  }
  // Collision audit over the returned polyline, densely sampled.
  for (std::size_t k = 1; k < p.polyline.size(); ++k)
    for (int s = 0; s <= 50; ++s) {
      const Vec2 q = p.polyline[k - 1] + (p.polyline[k] - p.polyline[k - 1]) * (s / 50.0);
      CHECK(terrain::min_separation(q, field) >= 0.0);
    }

  const auto blocked = square_field({0.8, -0.3}, 0.4);  // contains viewpoint 1 at x = 1
  CHECK_THROWS_AS(initial_path_viewpoints(a, b, inst, blocked, cfg), UnreachableError);
  b.instance_id = 5;
  CHECK_THROWS_AS(initial_path_viewpoints(a, b, inst, {}, cfg), PreconditionError);
}

TEST_CASE("resample and simplify polylines") {
  const auto r = resample_polyline({{0, 0}, {1, 0}, {1, 1}}, 5);
  CHECK(r.cols() == 5);
  CHECK((Vec2(r.col(2)) - Vec2(1, 0)).norm() < 1e-12);
  CHECK((Vec2(r.col(4)) - Vec2(1, 1)).norm() == 0.0);
  const auto s = simplify_polyline({{0, 0}, {1, 0}, {2, 0}, {2, 1}});
  CHECK(s.size() == 3);
}

TEST_CASE("plan_local delivers collision-free trajectories around plants") {
  std::vector<farm_map::Instance> v;
  for (int k = 0; k < 2; ++k) {
    farm_map::Instance i;
    i.id = k;
    i.center = {2.0 * k, 0};
    i.half_extents = {0.4, 0.4};
    i.height = 1.0;
    v.push_back(i);
  }
  auto grid = terrain::TraversabilityGrid::flat({-5, -4}, 0.1, 120, 80);
  for (int iy = 0; iy < grid.height(); ++iy)
    for (int ix = 0; ix < grid.width(); ++ix)
      for (const auto& i : v)
        if (i.strictly_contains(grid.cell_center(ix, iy))) grid.at(ix, iy).upsilon = kInf;
  const auto obstacles = terrain::extract_obstacles(grid, 2.0);
  farm_map::GraphConfig gcfg;
  const auto g = farm_map::build_graph(v, farm_map::detect_rows(v, gcfg.rows), grid, gcfg);
  global_planner::PlanningContext ctx;
  ctx.graph = &g;
  ctx.terrain = &grid;
  ctx.start = {-3, 0};
  const auto path = global_planner::generate_global_path({0, 1}, ctx);
  REQUIRE(path.covered_instances.size() == 2);
  LocalPlannerConfig cfg;
  const auto plan = plan_local(path, ctx, obstacles, cfg);
  CHECK(plan.segments.size() == path.node_ids.size() - 1);
  int views = 0;
  double last_t = 0;
  for (const auto& s : plan.segments) {
    views += s.kind == SegmentKind::kViewpoint;
    CHECK(s.speed == (s.kind == SegmentKind::kViewpoint ? cfg.v_sample : cfg.v_transit));
    std::vector<Vec2> pts;
    for (const auto& c : s.curve.samples) pts.push_back(c.point);
    if (!s.fallback) CHECK(collision_audit(pts, obstacles) >= 0.0);
    CHECK(std::memcmp(s.optimized.control.col(0).data(), s.initial.control.col(0).data(), 2 * sizeof(double)) == 0);
    CHECK(s.timestamps.front() >= last_t - 1e-12);
    last_t = s.timestamps.back();
  }
  CHECK(views == 4);
  CHECK(plan.duration == doctest::Approx(last_t));

  const auto j = nlohmann::json::parse(local_plan_to_json(plan, cfg));
  CHECK(j.contains("segments"));
  const auto again = plan_local(path, ctx, obstacles, cfg);
  CHECK(local_plan_to_json(again, cfg) == local_plan_to_json(plan, cfg));
}
