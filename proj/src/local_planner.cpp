#include "pheno/local_planner.hpp"

#include <json.hpp>

#include <algorithm>
#include <queue>
#include <random>

namespace pheno::local_planner {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0)) throw PreconditionError("learning rate must be positive");
  if (alpha_s < 0 || alpha_c < 0 || alpha_o < 0) throw PreconditionError("weights must be non-negative");
  if (!(alpha_s > 0 || alpha_c > 0 || alpha_o > 0)) throw PreconditionError("at least one weight must be positive");
  if (max_iters < 0) throw PreconditionError("max_iters must be non-negative");
}

ObjectiveContext ObjectiveContext::from(const OptimizerConfig& cfg, const terrain::ObstacleCostField* cost,
                                        Points2 desired) {
  ObjectiveContext ctx;
  ctx.alpha_s = cfg.alpha_s;
  ctx.alpha_c = cfg.alpha_c;
  ctx.alpha_o = cfg.alpha_o;
  ctx.cost = cost;
  ctx.desired = std::move(desired);
  return ctx;
}

double ObjectiveContext::step(const Points2& traj) const {
  return dt ? *dt : 1.0 / static_cast<double>(traj.cols() - 1);
}

namespace {

void require_points(const Points2& traj) {
  if (traj.cols() < 3) throw PreconditionError("trajectory needs at least 3 control points");
}

bool view_active(const Points2& traj, const ObjectiveContext& ctx) {
  if (ctx.desired.cols() == 0) return false;
  if (ctx.desired.cols() != traj.cols() - 2) {
    throw PreconditionError("view track must pair with the interior control points");
  }
  return true;
}

}  // namespace

ObjectiveTerms objective(const Points2& traj, const ObjectiveContext& ctx) {
  require_points(traj);
  const double dt = ctx.step(traj);
  const Eigen::Index n = traj.cols() - 1;
  const Points2 diff = traj.rightCols(n) - traj.leftCols(n);

  ObjectiveTerms t;
  t.smooth = diff.colwise().squaredNorm().sum() / dt;
  if (ctx.cost) {
    for (Eigen::Index i = 0; i < n; ++i) t.obstacle += (*ctx.cost)(traj.col(i)).cost * diff.col(i).norm();
  }
  if (view_active(traj, ctx)) {
    t.view = (traj.middleCols(1, n - 1) - ctx.desired).colwise().squaredNorm().sum() * dt;
  }
  t.total = ctx.alpha_s * t.smooth + ctx.alpha_c * t.obstacle + ctx.alpha_o * t.view;
  return t;
}

GradientTerms functional_gradient_terms(const Points2& traj, const ObjectiveContext& ctx) {
  require_points(traj);
  const double dt = ctx.step(traj);
  const Eigen::Index n = traj.cols() - 1;
  GradientTerms g;
  g.smooth = Points2::Zero(2, traj.cols());
  g.obstacle = Points2::Zero(2, traj.cols());
  g.view = Points2::Zero(2, traj.cols());

  const Points2 second = traj.rightCols(n - 1) - 2.0 * traj.middleCols(1, n - 1) + traj.leftCols(n - 1);
  g.smooth.middleCols(1, n - 1) = -(2.0 / dt) * second;  // = -2 dt * Q''

  if (ctx.cost) {
    std::vector<terrain::CostSample> c(static_cast<std::size_t>(n));
    Points2 tangent(2, n);
    Eigen::VectorXd len(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      c[static_cast<std::size_t>(i)] = (*ctx.cost)(traj.col(i));
      const Vec2 d = traj.col(i + 1) - traj.col(i);
      len(i) = d.norm();
      tangent.col(i) = len(i) > 0 ? Vec2(d / len(i)) : Vec2::Zero();
    }
    for (Eigen::Index i = 1; i < n; ++i) {
      const auto& ci = c[static_cast<std::size_t>(i)];
      const auto& cp = c[static_cast<std::size_t>(i - 1)];
      g.obstacle.col(i) = len(i) * ci.gradient - (ci.cost * tangent.col(i) - cp.cost * tangent.col(i - 1));
    }
  }
  if (view_active(traj, ctx)) {
    g.view.middleCols(1, n - 1) = 2.0 * dt * (traj.middleCols(1, n - 1) - ctx.desired);
  }
  g.total = ctx.alpha_s * g.smooth + ctx.alpha_c * g.obstacle + ctx.alpha_o * g.view;
  return g;
}

Points2 functional_gradient(const Points2& traj, const ObjectiveContext& ctx) {
  return functional_gradient_terms(traj, ctx).total;
}

GradientTerms continuous_functional_gradient(const Points2& traj, const ObjectiveContext& ctx) {
  require_points(traj);
  const double dt = ctx.step(traj);
  const Eigen::Index n = traj.cols() - 1;
  GradientTerms g;
  g.smooth = Points2::Zero(2, traj.cols());
  g.obstacle = Points2::Zero(2, traj.cols());
  g.view = Points2::Zero(2, traj.cols());
  for (Eigen::Index i = 1; i < n; ++i) {
    const Vec2 vel = (traj.col(i + 1) - traj.col(i - 1)) / (2.0 * dt);
    const Vec2 acc = (traj.col(i + 1) - 2.0 * traj.col(i) + traj.col(i - 1)) / (dt * dt);
    g.smooth.col(i) = -acc;
    if (ctx.cost) {
      const double speed = vel.norm();
      if (speed > 0) {
        const Vec2 t = vel / speed;
        const Eigen::Matrix2d proj = Eigen::Matrix2d::Identity() - t * t.transpose();
        const Vec2 kappa = proj * acc / (speed * speed);
        const auto c = (*ctx.cost)(traj.col(i));
        g.obstacle.col(i) = speed * (proj * c.gradient - c.cost * kappa);
      }
    }
  }
  if (view_active(traj, ctx)) g.view.middleCols(1, n - 1) = traj.middleCols(1, n - 1) - ctx.desired;
  g.total = ctx.alpha_s * g.smooth + ctx.alpha_c * g.obstacle + ctx.alpha_o * g.view;
  return g;
}

OptimizationResult optimize(const Trajectory& initial, const OptimizerConfig& cfg, const ObjectiveContext& ctx) {
  cfg.validate();
  OptimizationResult res;
  res.trajectory = initial;
  Points2& q = res.trajectory.control;
  double f = objective(q, ctx).total;
  if (!std::isfinite(f)) throw DivergedError("objective is not finite", 0);
  res.history.push_back(f);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    Points2 grad = functional_gradient(q, ctx);
    if (initial.fixed_endpoints) {
      grad.col(0).setZero();
      grad.col(grad.cols() - 1).setZero();
    }
    q.noalias() -= cfg.learning_rate * grad;
    const double f_new = objective(q, ctx).total;
    if (!std::isfinite(f_new) || !q.allFinite()) throw DivergedError("objective is not finite", it);
    res.history.push_back(f_new);
    res.iterations = it;
    const double decrease = f - f_new;
    f = f_new;
    if (std::abs(decrease) < cfg.convergence_tol) {
      res.converged = true;
      break;
    }
  }
  if (initial.fixed_endpoints) {
    q.col(0) = initial.control.col(0);
    q.col(q.cols() - 1) = initial.control.col(initial.control.cols() - 1);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Polylines

std::vector<Vec2> simplify_polyline(const std::vector<Vec2>& pts) {
  if (pts.size() < 3) return pts;
  std::vector<Vec2> out{pts.front()};
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const Vec2 d0 = pts[i] - out.back();
    const Vec2 d1 = pts[i + 1] - pts[i];
    if (d0.norm() < 1e-12) continue;
    const double cross = d0.x() * d1.y() - d0.y() * d1.x();
    if (std::abs(cross) > 1e-12 * std::max(1.0, d0.norm() * d1.norm()) || d0.dot(d1) < 0) out.push_back(pts[i]);
  }
  out.push_back(pts.back());
  return out;
}

double polyline_length(const std::vector<Vec2>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
  return len;
}

Points2 resample_polyline(const std::vector<Vec2>& pts, int count) {
  if (pts.empty() || count < 2) throw PreconditionError("resample needs points and count >= 2");
  Points2 out(2, count);
  const double total = polyline_length(pts);
  out.col(0) = pts.front();
  out.col(count - 1) = pts.back();
  std::size_t seg = 0;
  double seg_start = 0.0;
  for (int k = 1; k < count - 1; ++k) {
    const double s = total * static_cast<double>(k) / (count - 1);
    while (seg + 1 < pts.size() - 1 && seg_start + (pts[seg + 1] - pts[seg]).norm() < s) {
      seg_start += (pts[seg + 1] - pts[seg]).norm();
      ++seg;
    }
    const double l = (pts[seg + 1] - pts[seg]).norm();
    const double t = l > 0 ? std::clamp((s - seg_start) / l, 0.0, 1.0) : 0.0;
    out.col(k) = pts[seg] + t * (pts[seg + 1] - pts[seg]);
  }
  if (pts.size() == 1) out.colwise() = pts.front();
  return out;
}

// ---------------------------------------------------------------------------
// Viewpoint paths

std::vector<Vec2> preset_viewpoints(const Vec2& a, const Vec2& b, int n_views) {
  std::vector<Vec2> out;
  for (int k = 0; k < n_views; ++k) out.push_back(a + (b - a) * (static_cast<double>(k + 1) / (n_views + 1)));
  return out;
}

std::optional<std::vector<Vec2>> rrt_connect(const Vec2& from, const Vec2& to, const terrain::ObstacleField& obstacles,
                                             const RrtConfig& cfg) {
  const double margin = cfg.margin;
  if (terrain::segment_clear(from, to, obstacles, margin)) return std::vector<Vec2>{from, to};

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec2 lo = from.cwiseMin(to).array() - cfg.padding;
  const Vec2 hi = from.cwiseMax(to).array() + cfg.padding;

  std::vector<Vec2> nodes{from};
  std::vector<int> parent{-1};
  for (int s = 0; s < cfg.max_samples; ++s) {
    Vec2 sample = to;
    if (unit(rng) >= cfg.goal_bias) {
      sample = lo + (hi - lo).cwiseProduct(Vec2(unit(rng), unit(rng)));
    }
    std::size_t nearest = 0;
    double best = kInf;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double d = (nodes[i] - sample).squaredNorm();
      if (d < best) {
        best = d;
        nearest = i;
      }
    }
    const Vec2 dir = sample - nodes[nearest];
    const double len = dir.norm();
    if (len < 1e-9) continue;
    const Vec2 next = len <= cfg.step ? sample : Vec2(nodes[nearest] + dir * (cfg.step / len));
    if (!terrain::segment_clear(nodes[nearest], next, obstacles, margin)) continue;
    nodes.push_back(next);
    parent.push_back(static_cast<int>(nearest));
    if (terrain::segment_clear(next, to, obstacles, margin)) {
      std::vector<Vec2> path{to};
      for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; i = parent[static_cast<std::size_t>(i)]) {
        path.push_back(nodes[static_cast<std::size_t>(i)]);
      }
      std::reverse(path.begin(), path.end());
      // Greedy shortcutting keeps the path short and deterministic.
      std::vector<Vec2> shortcut{path.front()};
      std::size_t i = 0;
      while (i + 1 < path.size()) {
        std::size_t j = path.size() - 1;
        while (j > i + 1 && !terrain::segment_clear(path[i], path[j], obstacles, margin)) --j;
        shortcut.push_back(path[j]);
        i = j;
      }
      return shortcut;
    }
  }
  return std::nullopt;
}

ViewpointPath initial_path_viewpoints(const farm_map::PlanningNode& a, const farm_map::PlanningNode& b,
                                      const farm_map::Instance& inst, const terrain::ObstacleField& obstacles,
                                      const ViewpointConfig& cfg) {
  if (a.instance_id != inst.id || b.instance_id != inst.id) {
    throw PreconditionError("viewpoint path endpoints must belong to the instance");
  }
  ViewpointPath out;
  out.seed = cfg.rrt.seed;
  out.viewpoints = preset_viewpoints(a.position, b.position, cfg.n_views);
  std::vector<Vec2> stops{a.position};
  stops.insert(stops.end(), out.viewpoints.begin(), out.viewpoints.end());
  stops.push_back(b.position);
  for (std::size_t k = 0; k < stops.size(); ++k) {
    if (terrain::min_separation(stops[k], obstacles) < 0) {
      throw UnreachableError("viewpoint " + std::to_string(k) + " of instance " + std::to_string(inst.id) +
                             " lies inside an obstacle");
    }
  }
  out.polyline.push_back(stops.front());
  for (std::size_t k = 0; k + 1 < stops.size(); ++k) {
    RrtConfig rc = cfg.rrt;
    rc.seed = cfg.rrt.seed + k;
    const auto piece = rrt_connect(stops[k], stops[k + 1], obstacles, rc);
    if (!piece) {
      throw UnreachableError("RRT failed between viewpoints " + std::to_string(k) + " and " + std::to_string(k + 1) +
                             " of instance " + std::to_string(inst.id));
    }
    out.polyline.insert(out.polyline.end(), piece->begin() + 1, piece->end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid A*

double grid_move_cost(const terrain::TraversabilityGrid& grid, std::pair<int, int> u, std::pair<int, int> v,
                      const TransitConfig& cfg) {
  const double len = grid.cell_size() * std::hypot(v.first - u.first, v.second - u.second);
  const double risk = 0.5 * (grid.upsilon(u.first, u.second) + grid.upsilon(v.first, v.second));
  return len * (1.0 + cfg.cost_weight * risk);
}

GridPath astar(const Vec2& a, const Vec2& b, const terrain::TraversabilityGrid& grid, const TransitConfig& cfg) {
  const auto ca = grid.cell_of(a), cb = grid.cell_of(b);
  auto free_cell = [&](int ix, int iy) { return grid.in_bounds(ix, iy) && grid.upsilon(ix, iy) < cfg.obstacle_level; };
  if (!ca || !cb || !free_cell(ca->first, ca->second) || !free_cell(cb->first, cb->second)) {
    throw UnreachableError("transit endpoint lies outside the grid or in an impassable cell");
  }
  const int w = grid.width();
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x); };
  const std::size_t total = static_cast<std::size_t>(w) * static_cast<std::size_t>(grid.height());
  std::vector<double> g(total, kInf);
  std::vector<long> parent(total, -1);
  std::vector<char> closed(total, 0);
  auto heuristic = [&](int x, int y) {
    const double dx = std::abs(x - cb->first), dy = std::abs(y - cb->second);
    return grid.cell_size() * ((std::sqrt(2.0) - 1.0) * std::min(dx, dy) + std::max(dx, dy));
  };
  using Item = std::tuple<double, double, std::size_t>;  // f, g, index
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  g[idx(ca->first, ca->second)] = 0.0;
  open.emplace(heuristic(ca->first, ca->second), 0.0, idx(ca->first, ca->second));
  const std::size_t goal = idx(cb->first, cb->second);
  while (!open.empty()) {
    const auto [f, gc, u] = open.top();
    open.pop();
    if (closed[u]) continue;
    closed[u] = 1;
    if (u == goal) break;
    const int ux = static_cast<int>(u % static_cast<std::size_t>(w)), uy = static_cast<int>(u / static_cast<std::size_t>(w));
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const int vx = ux + dx, vy = uy + dy;
        if (!free_cell(vx, vy)) continue;
        if (dx != 0 && dy != 0 && (!free_cell(ux + dx, uy) || !free_cell(ux, uy + dy))) continue;
        const std::size_t v = idx(vx, vy);
        if (closed[v]) continue;
        const double nd = gc + grid_move_cost(grid, {ux, uy}, {vx, vy}, cfg);
        if (nd < g[v]) {
          g[v] = nd;
          parent[v] = static_cast<long>(u);
          open.emplace(nd + heuristic(vx, vy), nd, v);
        }
      }
    }
  }
  if (!std::isfinite(g[goal])) throw UnreachableError("no grid path between transit endpoints");
  GridPath path;
  path.cost = g[goal];
  for (long v = static_cast<long>(goal); v != -1; v = parent[static_cast<std::size_t>(v)]) {
    path.cells.emplace_back(static_cast<int>(static_cast<std::size_t>(v) % static_cast<std::size_t>(w)),
                            static_cast<int>(static_cast<std::size_t>(v) / static_cast<std::size_t>(w)));
  }
  std::reverse(path.cells.begin(), path.cells.end());
  path.polyline.push_back(a);
  for (std::size_t k = 1; k + 1 < path.cells.size(); ++k) {
    path.polyline.push_back(grid.cell_center(path.cells[k].first, path.cells[k].second));
  }
  path.polyline.push_back(b);
  path.polyline = simplify_polyline(path.polyline);
  return path;
}

GridPath initial_path_transit(const farm_map::PlanningNode& a, const farm_map::PlanningNode& b,
                              const terrain::TraversabilityGrid& grid, const TransitConfig& cfg) {
  return astar(a.position, b.position, grid, cfg);
}

// ---------------------------------------------------------------------------
// Parameterization

bspline::Curve bspline_parameterize(const Trajectory& traj, const bspline::Config& cfg) {
  return bspline::parameterize(traj.control, cfg);
}

std::vector<double> time_parameterize(const std::vector<Vec2>& samples, double v_max) {
  if (!(v_max > 0)) throw PreconditionError("v_max must be positive");
  if (samples.empty() || polyline_length(samples) == 0.0) return {0.0};
  std::vector<double> t{0.0};
  for (std::size_t i = 1; i < samples.size(); ++i) t.push_back(t.back() + (samples[i] - samples[i - 1]).norm() / v_max);
  return t;
}

double collision_audit(const std::vector<Vec2>& samples, const terrain::ObstacleField& obstacles) {
  double m = kInf;
  for (const auto& p : samples) m = std::min(m, terrain::min_separation(p, obstacles));
  return m;
}

// ---------------------------------------------------------------------------
// Whole path

bool is_viewpoint_pair(const farm_map::PlanningNode& a, const farm_map::PlanningNode& b) {
  if (a.is_access() || b.is_access() || a.instance_id != b.instance_id) return false;
  if (a.direction_index != b.direction_index) return false;
  const int d = (*a.corner_index - *b.corner_index + 4) % 4;
  return d == 1 || d == 3;
}

namespace {

int control_count(double length, const LocalPlannerConfig& cfg) {
  const int n = static_cast<int>(std::ceil(length / cfg.control_spacing)) + 1;
  return std::clamp(n, cfg.spline.degree + 1, std::max(cfg.spline.degree + 1, cfg.max_control_points));
}

std::vector<Vec2> curve_points(const bspline::Curve& c) {
  std::vector<Vec2> pts;
  for (const auto& s : c.samples) pts.push_back(s.point);
  return pts;
}

}  // namespace

LocalPlan plan_local(const global_planner::GlobalPath& path, const global_planner::PlanningContext& ctx,
                     const terrain::ObstacleField& obstacles, const LocalPlannerConfig& cfg) {
  LocalPlan plan;
  const terrain::ObstacleCostField cost(obstacles, cfg.epsilon);
  double clock = 0.0;
  for (std::size_t k = 1; k < path.node_ids.size(); ++k) {
    Segment seg;
    seg.from_node = path.node_ids[k - 1];
    seg.to_node = path.node_ids[k];
    seg.seed = cfg.seed + 1000 * k;
    const Vec2 a = ctx.position(seg.from_node), b = ctx.position(seg.to_node);
    const bool view = seg.from_node != global_planner::kStartNode &&
                      is_viewpoint_pair(ctx.graph->node(seg.from_node), ctx.graph->node(seg.to_node));

    Points2 desired;
    if (view) {
      const auto& na = ctx.graph->node(seg.from_node);
      const auto& nb = ctx.graph->node(seg.to_node);
      ViewpointConfig vc = cfg.view;
      vc.rrt.seed = seg.seed;
      const auto vp = initial_path_viewpoints(na, nb, ctx.graph->instance(*na.instance_id), obstacles, vc);
      seg.kind = SegmentKind::kViewpoint;
      seg.instance_id = na.instance_id;
      seg.viewpoints = vp.viewpoints;
      seg.initial_polyline = vp.polyline;
      seg.speed = cfg.v_sample;
    } else {
      seg.kind = SegmentKind::kTransit;
      seg.speed = cfg.v_transit;
      if ((b - a).norm() < 1e-9) {
        seg.initial_polyline = {a, b};
      } else if (terrain::segment_clear(a, b, obstacles, cfg.view.rrt.margin)) {
        seg.initial_polyline = {a, b};
      } else {
        seg.initial_polyline = astar(a, b, *ctx.terrain, cfg.transit).polyline;
      }
    }

    const int count = control_count(polyline_length(seg.initial_polyline), cfg);
    seg.initial.control = resample_polyline(seg.initial_polyline, count);
    OptimizerConfig oc = cfg.optimizer;
    if (view) {
      std::vector<Vec2> line{a, b};
      const Points2 ideal = resample_polyline(line, count);
      desired = ideal.middleCols(1, count - 2);
    } else {
      oc.alpha_o = 0.0;
    }
    if ((b - a).norm() < 1e-9 || polyline_length(seg.initial_polyline) < 1e-9) {
      seg.optimized = seg.initial;
      seg.history = {0.0};
    } else {
      const ObjectiveContext octx = ObjectiveContext::from(oc, &cost, desired);
      auto res = optimize(seg.initial, oc, octx);
      seg.optimized = std::move(res.trajectory);
      seg.history = std::move(res.history);
    }

    seg.curve = bspline_parameterize(seg.optimized, cfg.spline);
    auto pts = curve_points(seg.curve);
    if (!obstacles.empty() && collision_audit(pts, obstacles) < 0) {
      // Deliver the collision-free initial polyline instead.
      seg.fallback = true;
      seg.optimized.control = Points2(2, static_cast<Eigen::Index>(seg.initial_polyline.size()));
      for (std::size_t i = 0; i < seg.initial_polyline.size(); ++i) {
        seg.optimized.control.col(static_cast<Eigen::Index>(i)) = seg.initial_polyline[i];
      }
      bspline::Config linear = cfg.spline;
      linear.degree = 1;
      linear.knots.clear();
      linear.weights.clear();
      seg.curve = bspline_parameterize(seg.optimized, linear);
      pts = curve_points(seg.curve);
    }
    seg.timestamps = time_parameterize(pts, seg.speed);
    for (auto& t : seg.timestamps) t += clock;
    clock = seg.timestamps.back();
    plan.segments.push_back(std::move(seg));
  }
  plan.duration = clock;
  return plan;
}

std::string local_plan_to_json(const LocalPlan& plan, const LocalPlannerConfig& cfg) {
  auto pts_json = [](const Points2& p) {
    json a = json::array();
    for (Eigen::Index i = 0; i < p.cols(); ++i) a.push_back({p(0, i), p(1, i)});
    return a;
  };
  json segs = json::array();
  for (const auto& s : plan.segments) {
    json samples = json::array();
    for (std::size_t i = 0; i < s.curve.samples.size(); ++i) {
      const double t = i < s.timestamps.size() ? s.timestamps[i] : s.timestamps.back();
      samples.push_back({{"t", t}, {"x", s.curve.samples[i].point.x()}, {"y", s.curve.samples[i].point.y()},
                         {"speed", s.speed}});
    }
    json vps = json::array();
    for (const auto& v : s.viewpoints) vps.push_back({v.x(), v.y()});
    json seg = {{"from", s.from_node},
                {"to", s.to_node},
                {"kind", s.kind == SegmentKind::kViewpoint ? "viewpoint" : "transit"},
                {"instance_id", s.instance_id ? json(*s.instance_id) : json(nullptr)},
                {"control_points", pts_json(s.optimized.control)},
                {"spline", {{"degree", s.curve.degree}, {"knots", s.curve.knots}, {"weights", s.curve.weights}}},
                {"samples", samples},
                {"viewpoints", vps},
                {"objective_history", s.history},
                {"fallback", s.fallback},
                {"seed", s.seed}};
    segs.push_back(seg);
  }
  json config = {{"alpha_s", cfg.optimizer.alpha_s},
                 {"alpha_c", cfg.optimizer.alpha_c},
                 {"alpha_o", cfg.optimizer.alpha_o},
                 {"learning_rate", cfg.optimizer.learning_rate},
                 {"max_iters", cfg.optimizer.max_iters},
                 {"epsilon", cfg.epsilon},
                 {"n_views", cfg.view.n_views},
                 {"v_sample", cfg.v_sample},
                 {"v_transit", cfg.v_transit},
                 {"seed", cfg.seed}};
  json doc = {{"segments", segs}, {"duration_s", plan.duration}, {"config", config}};
  return doc.dump(2);
}

}  // namespace pheno::local_planner
