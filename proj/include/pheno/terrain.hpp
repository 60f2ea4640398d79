#pragma once

#include "pheno/core.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace pheno::terrain {

struct TerrainCloud {
  std::vector<Vec3> points;
};

/// Weights and critical values of the traversability model, plus the
/// obstacle cost influence radius.
struct CostFieldConfig {
  double epsilon = 0.8;          // cost influence radius [m]
  double s_crit = 0.35;          // maximum allowed slope [rad]
  double lambda_crit = 0.15;     // maximum allowed step [m]
  double alpha_s = 0.5;
  double alpha_lambda = 0.5;
  double slope_window = 0.5;     // side of the neighbourhood cube [m]
  double body_clearance = 0.3;   // points higher than ground + this count as collision points [m]
  double ground_percentile = 0.1;

  void validate() const;
};

struct CellRisk {
  double collision = 0.0;  // theta in [0, 1]
  double slope = kInf;     // rad
  double step = kInf;      // m
  double ground = 0.0;     // ground height [m]
  double upsilon = kInf;   // combined traversability value
  int point_count = 0;
};

/// Combined traversability for finite inputs.
double combine_risk(double collision, double slope, double step, const CostFieldConfig& cfg);

class TraversabilityGrid {
 public:
  TraversabilityGrid() = default;
  TraversabilityGrid(Vec2 origin, double cell_size, int width, int height);

  /// A grid where every cell is measured flat ground (Upsilon = 0).
  static TraversabilityGrid flat(Vec2 origin, double cell_size, int width, int height);

  const Vec2& origin() const { return origin_; }
  double cell_size() const { return cell_size_; }
  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  bool in_bounds(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < width_ && iy < height_; }
  std::optional<std::pair<int, int>> cell_of(const Vec2& p) const;
  Vec2 cell_center(int ix, int iy) const;

  CellRisk& at(int ix, int iy) { return cells_[index(ix, iy)]; }
  const CellRisk& at(int ix, int iy) const { return cells_[index(ix, iy)]; }
  double upsilon(int ix, int iy) const { return at(ix, iy).upsilon; }
  /// Upsilon at a world position; +inf outside the grid.
  double upsilon_at(const Vec2& p) const;

  const std::vector<CellRisk>& cells() const { return cells_; }

  /// Distinct cells visited by the straight segment a-b, in order from a.
  std::vector<std::pair<int, int>> cells_on_segment(const Vec2& a, const Vec2& b) const;
  /// Mean Upsilon over the cells crossed by segment a-b (+inf if any is unknown).
  double mean_upsilon_on_segment(const Vec2& a, const Vec2& b) const;
  double max_upsilon_on_segment(const Vec2& a, const Vec2& b) const;

 private:
  std::size_t index(int ix, int iy) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(ix);
  }

  Vec2 origin_ = Vec2::Zero();
  double cell_size_ = 0.1;
  int width_ = 0;
  int height_ = 0;
  std::vector<CellRisk> cells_;
};

/// Segment gate shared by the planners: every crossed cell below the obstacle
/// level and the mean below the corridor limit.
struct TraversabilityGate {
  double max_mean = 0.8;
  double obstacle_level = 2.0;

  bool passes(const TraversabilityGrid& grid, const Vec2& a, const Vec2& b) const;
};

/// Spatial hash of a cloud, bucketed by grid cell.
class CloudIndex {
 public:
  CloudIndex(const TerrainCloud& cloud, Vec2 origin, double cell_size, int width, int height);

  /// Points inside the axis-aligned cube centred at c with the given side.
  std::vector<Vec3> in_cube(const Vec3& c, double side) const;
  const std::vector<int>& bucket(int ix, int iy) const;

 private:
  const TerrainCloud* cloud_;
  Vec2 origin_;
  double cell_size_;
  int width_, height_;
  std::vector<std::vector<int>> buckets_;
};

/// Slope angle of the plane fitted (SVD) to the neighbourhood; empty when the
/// neighbourhood is degenerate (fewer than three points or collinear).
std::optional<double> fit_slope(const std::vector<Vec3>& neighbourhood);

/// Slope at a cell's terrain point (cell centre at ground height).
std::optional<double> slope_at(const TraversabilityGrid& grid, int ix, int iy, const CloudIndex& index,
                               double slope_window);

/// Largest absolute ground-height difference to occupied 8-neighbours.
double step_at(const TraversabilityGrid& grid, int ix, int iy);

struct GridBounds {
  Vec2 origin;
  int width;
  int height;
};

/// Builds the traversability grid from a cloud. Bounds default to the cloud's
/// xy extent.
TraversabilityGrid build_grid(const TerrainCloud& cloud, const CostFieldConfig& cfg, double cell_size,
                              std::optional<GridBounds> bounds = std::nullopt);

struct Polygon {
  std::vector<Vec2> vertices;  // counter-clockwise, not closed

  double signed_area() const;
  bool contains(const Vec2& q) const;
};

struct ObstacleField {
  std::vector<Polygon> polygons;
  bool empty() const { return polygons.empty(); }
};

/// Traces 4-connected components of cells with Upsilon >= level into simple
/// CCW polygons. Enclosed free pockets are absorbed into their surrounding
/// obstacle.
ObstacleField extract_obstacles(const TraversabilityGrid& grid, double level);

struct Separation {
  double distance = kInf;  // signed: negative inside an obstacle
  Vec2 gradient = Vec2::Zero();
};

/// Signed Euclidean distance from q to a single polygon with its gradient.
Separation polygon_separation(const Vec2& q, const Polygon& poly);

/// Minimum signed separation over every polygon; +inf for an empty field.
Separation min_separation_with_gradient(const Vec2& q, const ObstacleField& field);
double min_separation(const Vec2& q, const ObstacleField& field);

/// Piecewise obstacle cost of a signed separation and its derivative.
template <typename Scalar>
std::pair<Scalar, Scalar> chomp_cost(Scalar phi, Scalar epsilon) {
  if (phi >= epsilon) return {Scalar(0), Scalar(0)};
  if (phi > Scalar(0)) {
    const Scalar d = epsilon - phi;
    return {d * d / (Scalar(2) * epsilon), -d / epsilon};
  }
  return {-phi + epsilon / Scalar(2), Scalar(-1)};
}

struct CostSample {
  double cost = 0.0;
  Vec2 gradient = Vec2::Zero();
};

class ObstacleCostField {
 public:
  ObstacleCostField() = default;
  ObstacleCostField(ObstacleField field, double epsilon);

  CostSample operator()(const Vec2& q) const;
  const ObstacleField& obstacles() const { return field_; }
  double epsilon() const { return epsilon_; }

 private:
  ObstacleField field_;
  double epsilon_ = 0.8;
};

/// True when the segment a-b stays at least `margin` away from every polygon.
bool segment_clear(const Vec2& a, const Vec2& b, const ObstacleField& field, double margin = 0.0);

}  // namespace pheno::terrain
