#pragma once

#include "pheno/bspline.hpp"
#include "pheno/core.hpp"
#include "pheno/farm_map.hpp"
#include "pheno/global_planner.hpp"
#include "pheno/terrain.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pheno::local_planner {

struct Trajectory {
  Points2 control;  // Q_0 .. Q_n, one column each
  bool fixed_endpoints = true;
  std::vector<double> timestamps;

  Eigen::Index size() const { return control.cols(); }
};

struct OptimizerConfig {
  double alpha_s = 1.0;
  double alpha_c = 10.0;
  double alpha_o = 2.0;
  double learning_rate = 5e-3;
  int max_iters = 300;
  double convergence_tol = 1e-9;

  void validate() const;
};

/// Inputs of the objective other than the trajectory itself.
struct ObjectiveContext {
  double alpha_s = 1.0;
  double alpha_c = 0.0;
  double alpha_o = 0.0;
  const terrain::ObstacleCostField* cost = nullptr;  // no obstacle term when null
  Points2 desired;                                    // view track for interior points; empty disables f_o
  std::optional<double> dt;                           // defaults to 1 / n

  static ObjectiveContext from(const OptimizerConfig& cfg, const terrain::ObstacleCostField* cost = nullptr,
                               Points2 desired = {});
  double step(const Points2& traj) const;
};

struct ObjectiveTerms {
  double total = 0.0;
  double smooth = 0.0;
  double obstacle = 0.0;
  double view = 0.0;
};

/// f_s = sum |Q_{i+1} - Q_i|^2 / dt, f_c = sum c(Q_i) |Q_{i+1} - Q_i|,
/// f_o = sum_{interior} |Q_i - Qd_i|^2 dt, combined with the context weights.
ObjectiveTerms objective(const Points2& traj, const ObjectiveContext& ctx);

struct GradientTerms {
  Points2 total;
  Points2 smooth;
  Points2 obstacle;
  Points2 view;
};

/// Exact gradient of the discretized objective with respect to the control
/// points; zero at the two pinned endpoints. Per interior point:
///   smooth:   -2 dt Q''_i                               (Q'' the central second difference)
///   obstacle: |dQ_i| grad c(Q_i) - (c_i T_i - c_{i-1} T_{i-1})   (T unit forward tangent)
///   view:     2 dt (Q_i - Qd_i)
GradientTerms functional_gradient_terms(const Points2& traj, const ObjectiveContext& ctx);
Points2 functional_gradient(const Points2& traj, const ObjectiveContext& ctx);

/// Continuous-form functional gradients sampled at interior points with
/// central differences:  -Q'',  |Q'| [(I - T T^T) grad c - c kappa] with
/// kappa = (I - T T^T) Q'' / |Q'|^2, and (Q - Qd). Used to cross-check the
/// discrete gradient, which approaches dt times these (2 dt for the quadratic terms).
GradientTerms continuous_functional_gradient(const Points2& traj, const ObjectiveContext& ctx);

struct OptimizationResult {
  Trajectory trajectory;
  std::vector<double> history;  // objective before the first update, then after each update
  int iterations = 0;
  bool converged = false;
};

OptimizationResult optimize(const Trajectory& initial, const OptimizerConfig& cfg, const ObjectiveContext& ctx);

// ---------------------------------------------------------------------------
// Initial paths

/// Evenly spaced points strictly between a and b.
std::vector<Vec2> preset_viewpoints(const Vec2& a, const Vec2& b, int n_views);

struct RrtConfig {
  double goal_bias = 0.1;
  double step = 0.25;
  int max_samples = 5000;
  double margin = 0.05;   // required clearance of every tree edge [m]
  double padding = 3.0;   // sampling box padding around the endpoints [m]
  std::uint64_t seed = 1;
};

/// Goal-biased RRT between two points; a straight connection is tried first.
std::optional<std::vector<Vec2>> rrt_connect(const Vec2& from, const Vec2& to, const terrain::ObstacleField& obstacles,
                                             const RrtConfig& cfg);

struct ViewpointConfig {
  int n_views = 6;
  double view_tol = 0.05;
  RrtConfig rrt;
};

struct ViewpointPath {
  std::vector<Vec2> polyline;
  std::vector<Vec2> viewpoints;
  std::uint64_t seed = 0;
};

ViewpointPath initial_path_viewpoints(const farm_map::PlanningNode& a, const farm_map::PlanningNode& b,
                                      const farm_map::Instance& inst, const terrain::ObstacleField& obstacles,
                                      const ViewpointConfig& cfg);

struct TransitConfig {
  double obstacle_level = 2.0;  // cells at or above are impassable
  double cost_weight = 1.0;     // move cost = length * (1 + cost_weight * mean Upsilon)
};

struct GridPath {
  std::vector<std::pair<int, int>> cells;
  double cost = 0.0;
  std::vector<Vec2> polyline;  // a, interior cell centres, b
};

/// 8-connected A* on the traversability grid (no corner cutting).
GridPath astar(const Vec2& a, const Vec2& b, const terrain::TraversabilityGrid& grid, const TransitConfig& cfg);
double grid_move_cost(const terrain::TraversabilityGrid& grid, std::pair<int, int> u, std::pair<int, int> v,
                      const TransitConfig& cfg);

GridPath initial_path_transit(const farm_map::PlanningNode& a, const farm_map::PlanningNode& b,
                              const terrain::TraversabilityGrid& grid, const TransitConfig& cfg);

/// Removes collinear interior vertices.
std::vector<Vec2> simplify_polyline(const std::vector<Vec2>& pts);
double polyline_length(const std::vector<Vec2>& pts);
/// `count` points at uniform arc length along the polyline (endpoints exact).
Points2 resample_polyline(const std::vector<Vec2>& pts, int count);

// ---------------------------------------------------------------------------
// Parameterization

bspline::Curve bspline_parameterize(const Trajectory& traj, const bspline::Config& cfg);

/// Constant-speed arc-length timestamps; a zero-length curve yields {0}.
std::vector<double> time_parameterize(const std::vector<Vec2>& samples, double v_max);

// ---------------------------------------------------------------------------
// Whole-path planning

enum class SegmentKind { kViewpoint, kTransit };

struct LocalPlannerConfig {
  OptimizerConfig optimizer;
  ViewpointConfig view;
  TransitConfig transit;
  bspline::Config spline;
  double epsilon = 0.8;
  double control_spacing = 0.3;
  int max_control_points = 24;
  double v_sample = 0.2;
  double v_transit = 1.0;
  std::uint64_t seed = 1;
};

struct Segment {
  int from_node = 0;
  int to_node = 0;
  SegmentKind kind = SegmentKind::kTransit;
  std::optional<int> instance_id;
  std::vector<Vec2> initial_polyline;
  std::vector<Vec2> viewpoints;
  Trajectory initial;
  Trajectory optimized;
  std::vector<double> history;
  bspline::Curve curve;
  std::vector<double> timestamps;  // absolute, continuing from the previous segment
  double speed = 1.0;
  bool fallback = false;  // delivered the initial polyline after a failed collision audit
  std::uint64_t seed = 0;
};

struct LocalPlan {
  std::vector<Segment> segments;
  double duration = 0.0;
};

/// True when the two consecutive global-path nodes sweep one flank of an instance.
bool is_viewpoint_pair(const farm_map::PlanningNode& a, const farm_map::PlanningNode& b);

LocalPlan plan_local(const global_planner::GlobalPath& path, const global_planner::PlanningContext& ctx,
                     const terrain::ObstacleField& obstacles, const LocalPlannerConfig& cfg);

/// Minimum separation of every sample against the field.
double collision_audit(const std::vector<Vec2>& samples, const terrain::ObstacleField& obstacles);

std::string local_plan_to_json(const LocalPlan& plan, const LocalPlannerConfig& cfg);

}  // namespace pheno::local_planner
