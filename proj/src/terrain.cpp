#include "pheno/terrain.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <map>
#include <numeric>

namespace pheno::terrain {

void CostFieldConfig::validate() const {
  if (!(epsilon > 0 && s_crit > 0 && lambda_crit > 0 && alpha_s > 0 && alpha_lambda > 0 && slope_window > 0 &&
        body_clearance > 0)) {
    throw PreconditionError("cost field config: all parameters must be positive");
  }
  if (!(ground_percentile >= 0 && ground_percentile <= 1)) {
    throw PreconditionError("cost field config: ground_percentile must lie in [0, 1]");
  }
}

double combine_risk(double collision, double slope, double step, const CostFieldConfig& cfg) {
  return collision + cfg.alpha_s * slope / cfg.s_crit + cfg.alpha_lambda * step / cfg.lambda_crit;
}

// ---------------------------------------------------------------------------
// TraversabilityGrid

TraversabilityGrid::TraversabilityGrid(Vec2 origin, double cell_size, int width, int height)
    : origin_(std::move(origin)), cell_size_(cell_size), width_(width), height_(height) {
  if (!(cell_size > 0)) throw PreconditionError("cell_size must be positive");
  if (width < 0 || height < 0) throw PreconditionError("grid dimensions must be non-negative");
  cells_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), CellRisk{});
}

TraversabilityGrid TraversabilityGrid::flat(Vec2 origin, double cell_size, int width, int height) {
  TraversabilityGrid g(std::move(origin), cell_size, width, height);
  for (auto& c : g.cells_) {
    c = CellRisk{0.0, 0.0, 0.0, 0.0, 0.0, 1};
  }
  return g;
}

std::optional<std::pair<int, int>> TraversabilityGrid::cell_of(const Vec2& p) const {
  const double fx = std::floor((p.x() - origin_.x()) / cell_size_);
  const double fy = std::floor((p.y() - origin_.y()) / cell_size_);
  if (!std::isfinite(fx) || !std::isfinite(fy)) return std::nullopt;
  if (fx < 0 || fy < 0 || fx >= width_ || fy >= height_) return std::nullopt;
  return std::make_pair(static_cast<int>(fx), static_cast<int>(fy));
}

Vec2 TraversabilityGrid::cell_center(int ix, int iy) const {
  return origin_ + cell_size_ * Vec2(ix + 0.5, iy + 0.5);
}

double TraversabilityGrid::upsilon_at(const Vec2& p) const {
  const auto c = cell_of(p);
  return c ? upsilon(c->first, c->second) : kInf;
}

std::vector<std::pair<int, int>> TraversabilityGrid::cells_on_segment(const Vec2& a, const Vec2& b) const {
  std::vector<std::pair<int, int>> out;
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / (0.25 * cell_size_))));
  for (int k = 0; k <= n; ++k) {
    const Vec2 p = a + (b - a) * (static_cast<double>(k) / n);
    const auto c = cell_of(p);
    const std::pair<int, int> cell = c ? *c : std::make_pair(-1, -1);
    if (std::find(out.begin(), out.end(), cell) == out.end()) out.push_back(cell);
  }
  return out;
}

double TraversabilityGrid::mean_upsilon_on_segment(const Vec2& a, const Vec2& b) const {
  const auto cells = cells_on_segment(a, b);
  double sum = 0.0;
  for (const auto& [ix, iy] : cells) {
    if (!in_bounds(ix, iy)) return kInf;
    sum += upsilon(ix, iy);
  }
  return sum / static_cast<double>(cells.size());
}

double TraversabilityGrid::max_upsilon_on_segment(const Vec2& a, const Vec2& b) const {
  double m = 0.0;
  for (const auto& [ix, iy] : cells_on_segment(a, b)) {
    if (!in_bounds(ix, iy)) return kInf;
    m = std::max(m, upsilon(ix, iy));
  }
  return m;
}

bool TraversabilityGate::passes(const TraversabilityGrid& grid, const Vec2& a, const Vec2& b) const {
  const auto cells = grid.cells_on_segment(a, b);
  double sum = 0.0;
  for (const auto& [ix, iy] : cells) {
    if (!grid.in_bounds(ix, iy)) return false;
    const double u = grid.upsilon(ix, iy);
    if (!(u < obstacle_level)) return false;
    sum += u;
  }
  return sum / static_cast<double>(cells.size()) < max_mean;
}

// ---------------------------------------------------------------------------
// Cloud index

CloudIndex::CloudIndex(const TerrainCloud& cloud, Vec2 origin, double cell_size, int width, int height)
    : cloud_(&cloud), origin_(std::move(origin)), cell_size_(cell_size), width_(width), height_(height) {
  buckets_.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const double fx = std::floor((p.x() - origin_.x()) / cell_size_);
    const double fy = std::floor((p.y() - origin_.y()) / cell_size_);
    if (fx < 0 || fy < 0 || fx >= width_ || fy >= height_) continue;
    buckets_[static_cast<std::size_t>(fy) * width_ + static_cast<std::size_t>(fx)].push_back(static_cast<int>(i));
  }
}

const std::vector<int>& CloudIndex::bucket(int ix, int iy) const {
  return buckets_[static_cast<std::size_t>(iy) * width_ + static_cast<std::size_t>(ix)];
}

std::vector<Vec3> CloudIndex::in_cube(const Vec3& c, double side) const {
  const double h = 0.5 * side;
  const int x0 = std::max(0, static_cast<int>(std::floor((c.x() - h - origin_.x()) / cell_size_)));
  const int x1 = std::min(width_ - 1, static_cast<int>(std::floor((c.x() + h - origin_.x()) / cell_size_)));
  const int y0 = std::max(0, static_cast<int>(std::floor((c.y() - h - origin_.y()) / cell_size_)));
  const int y1 = std::min(height_ - 1, static_cast<int>(std::floor((c.y() + h - origin_.y()) / cell_size_)));
  std::vector<Vec3> out;
  for (int iy = y0; iy <= y1; ++iy) {
    for (int ix = x0; ix <= x1; ++ix) {
      for (int idx : bucket(ix, iy)) {
        const Vec3& p = cloud_->points[static_cast<std::size_t>(idx)];
        if ((p - c).cwiseAbs().maxCoeff() <= h) out.push_back(p);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Risk terms

std::optional<double> fit_slope(const std::vector<Vec3>& neighbourhood) {
  if (neighbourhood.size() < 3) return std::nullopt;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : neighbourhood) mean += p;
  mean /= static_cast<double>(neighbourhood.size());
  Eigen::MatrixX3d centered(neighbourhood.size(), 3);
  for (std::size_t i = 0; i < neighbourhood.size(); ++i) {
    centered.row(static_cast<Eigen::Index>(i)) = (neighbourhood[i] - mean).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixX3d> svd(centered, Eigen::ComputeThinV);
  const Vec3 sv = svd.singularValues();
  // A plane needs two independent in-plane directions.
  if (!(sv(1) > 1e-9 * std::max(1.0, sv(0)))) return std::nullopt;
  const Vec3 normal = svd.matrixV().col(2);
  const double cosine = std::min(1.0, std::abs(normal.z()) / normal.norm());
  return std::acos(cosine);
}

std::optional<double> slope_at(const TraversabilityGrid& grid, int ix, int iy, const CloudIndex& index,
                               double slope_window) {
  const CellRisk& cell = grid.at(ix, iy);
  if (cell.point_count == 0) return std::nullopt;
  const Vec2 c = grid.cell_center(ix, iy);
  return fit_slope(index.in_cube(Vec3(c.x(), c.y(), cell.ground), slope_window));
}

double step_at(const TraversabilityGrid& grid, int ix, int iy) {
  const CellRisk& cell = grid.at(ix, iy);
  double step = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0) continue;
      const int nx = ix + dx, ny = iy + dy;
      if (!grid.in_bounds(nx, ny)) continue;
      const CellRisk& n = grid.at(nx, ny);
      if (n.point_count == 0) continue;
      step = std::max(step, std::abs(n.ground - cell.ground));
    }
  }
  return step;
}

TraversabilityGrid build_grid(const TerrainCloud& cloud, const CostFieldConfig& cfg, double cell_size,
                              std::optional<GridBounds> bounds) {
  cfg.validate();
  if (!(cell_size > 0)) throw PreconditionError("cell_size must be positive");
  if (!bounds) {
    if (cloud.points.empty()) return TraversabilityGrid(Vec2::Zero(), cell_size, 0, 0);
    Vec2 lo(kInf, kInf), hi(-kInf, -kInf);
    for (const auto& p : cloud.points) {
      lo = lo.cwiseMin(p.head<2>());
      hi = hi.cwiseMax(p.head<2>());
    }
    const int w = static_cast<int>(std::floor((hi.x() - lo.x()) / cell_size)) + 1;
    const int h = static_cast<int>(std::floor((hi.y() - lo.y()) / cell_size)) + 1;
    bounds = GridBounds{lo, w, h};
  }
  TraversabilityGrid grid(bounds->origin, cell_size, bounds->width, bounds->height);
  const CloudIndex index(cloud, bounds->origin, cell_size, bounds->width, bounds->height);

  // Ground height and collision risk.
  std::vector<double> heights;
  for (int iy = 0; iy < grid.height(); ++iy) {
    for (int ix = 0; ix < grid.width(); ++ix) {
      const auto& bucket = index.bucket(ix, iy);
      CellRisk& cell = grid.at(ix, iy);
      cell.point_count = static_cast<int>(bucket.size());
      if (bucket.empty()) continue;
      heights.clear();
      for (int idx : bucket) heights.push_back(cloud.points[static_cast<std::size_t>(idx)].z());
      std::sort(heights.begin(), heights.end());
      const auto rank = static_cast<std::size_t>(std::floor(cfg.ground_percentile * (heights.size() - 1)));
      cell.ground = heights[rank];
      const auto above = std::count_if(heights.begin(), heights.end(),
                                       [&](double z) { return z > cell.ground + cfg.body_clearance; });
      cell.collision = std::clamp(static_cast<double>(above) / static_cast<double>(heights.size()), 0.0, 1.0);
    }
  }

  // Slope, step and the combined value.
  for (int iy = 0; iy < grid.height(); ++iy) {
    for (int ix = 0; ix < grid.width(); ++ix) {
      CellRisk& cell = grid.at(ix, iy);
      if (cell.point_count == 0) {
        cell.slope = cell.step = cell.upsilon = kInf;
        continue;
      }
      const auto s = slope_at(grid, ix, iy, index, cfg.slope_window);
      cell.step = step_at(grid, ix, iy);
      if (!s) {
        cell.slope = cell.upsilon = kInf;
        continue;
      }
      cell.slope = *s;
      cell.upsilon = combine_risk(cell.collision, cell.slope, cell.step, cfg);
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Polygons

double Polygon::signed_area() const {
  double a = 0.0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = vertices[i];
    const Vec2& q = vertices[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

bool Polygon::contains(const Vec2& q) const {
  bool inside = false;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = vertices[i];
    const Vec2& b = vertices[j];
    if ((a.y() > q.y()) != (b.y() > q.y())) {
      const double x = (b.x() - a.x()) * (q.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (q.x() < x) inside = !inside;
    }
  }
  return inside;
}

namespace {

using Lattice = std::pair<int, int>;

int turn_rank(const Lattice& in, const Lattice& out) {
  // Prefer left turn, then straight, then right; keeps diagonal cells apart.
  const int cross = in.first * out.second - in.second * out.first;
  const int dot = in.first * out.first + in.second * out.second;
  if (cross > 0) return 0;
  if (dot > 0) return 1;
  return 2;
}

std::vector<Vec2> simplify_loop(const std::vector<Lattice>& loop, const Vec2& origin, double cs) {
  std::vector<Vec2> out;
  const std::size_t n = loop.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Lattice& prev = loop[(i + n - 1) % n];
    const Lattice& cur = loop[i];
    const Lattice& next = loop[(i + 1) % n];
    const int dx0 = cur.first - prev.first, dy0 = cur.second - prev.second;
    const int dx1 = next.first - cur.first, dy1 = next.second - cur.second;
    if (dx0 * dy1 - dy0 * dx1 == 0) continue;  // collinear
    out.push_back(origin + cs * Vec2(cur.first, cur.second));
  }
  return out;
}

}  // namespace

ObstacleField extract_obstacles(const TraversabilityGrid& grid, double level) {
  if (!(level > 0)) throw PreconditionError("obstacle level must be positive");
  ObstacleField field;
  const int w = grid.width(), h = grid.height();
  auto blocked = [&](int ix, int iy) {
    if (!grid.in_bounds(ix, iy)) return false;
    const double u = grid.upsilon(ix, iy);
    return !(u < level);
  };

  // Directed boundary edges with the obstacle on the left.
  std::map<Lattice, std::vector<Lattice>> outgoing;
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      if (!blocked(ix, iy)) continue;
      if (!blocked(ix, iy - 1)) outgoing[{ix, iy}].push_back({ix + 1, iy});
      if (!blocked(ix + 1, iy)) outgoing[{ix + 1, iy}].push_back({ix + 1, iy + 1});
      if (!blocked(ix, iy + 1)) outgoing[{ix + 1, iy + 1}].push_back({ix, iy + 1});
      if (!blocked(ix - 1, iy)) outgoing[{ix, iy + 1}].push_back({ix, iy});
    }
  }

  while (!outgoing.empty()) {
    auto start_it = outgoing.begin();
    const Lattice start = start_it->first;
    std::vector<Lattice> loop{start};
    Lattice cur = start;
    Lattice next = start_it->second.front();
    start_it->second.erase(start_it->second.begin());
    if (start_it->second.empty()) outgoing.erase(start_it);
    while (next != start) {
      const Lattice dir_in{next.first - cur.first, next.second - cur.second};
      cur = next;
      loop.push_back(cur);
      auto it = outgoing.find(cur);
      if (it == outgoing.end()) break;  // cannot happen for a closed boundary
      auto& outs = it->second;
      std::size_t best = 0;
      for (std::size_t k = 1; k < outs.size(); ++k) {
        const Lattice d_k{outs[k].first - cur.first, outs[k].second - cur.second};
        const Lattice d_b{outs[best].first - cur.first, outs[best].second - cur.second};
        if (turn_rank(dir_in, d_k) < turn_rank(dir_in, d_b)) best = k;
      }
      next = outs[best];
      outs.erase(outs.begin() + static_cast<std::ptrdiff_t>(best));
      if (outs.empty()) outgoing.erase(it);
    }
    Polygon poly{simplify_loop(loop, grid.origin(), grid.cell_size())};
    // Clockwise loops bound enclosed free pockets; the outer loop covers them.
    if (poly.vertices.size() >= 3 && poly.signed_area() > 0) field.polygons.push_back(std::move(poly));
  }
  return field;
}

namespace {

struct Closest {
  double dist2 = kInf;
  Vec2 point = Vec2::Zero();
  Vec2 edge_normal = Vec2::Zero();  // outward normal of the closest edge (CCW polygon)
};

Closest closest_on_boundary(const Vec2& q, const Polygon& poly) {
  Closest best;
  const std::size_t n = poly.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    const Vec2 ab = b - a;
    const double l2 = ab.squaredNorm();
    const double t = l2 > 0 ? std::clamp((q - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
    const Vec2 p = a + t * ab;
    const double d2 = (q - p).squaredNorm();
    if (d2 < best.dist2) {
      best.dist2 = d2;
      best.point = p;
      best.edge_normal = l2 > 0 ? Vec2(Vec2(ab.y(), -ab.x()) / std::sqrt(l2)) : Vec2(Vec2::Zero());
    }
  }
  return best;
}

bool segments_cross(const Vec2& p0, const Vec2& p1, const Vec2& q0, const Vec2& q1) {
  auto orient = [](const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
  };
  const double o1 = orient(p0, p1, q0), o2 = orient(p0, p1, q1);
  const double o3 = orient(q0, q1, p0), o4 = orient(q0, q1, p1);
  return ((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0));
}

double segment_segment_distance(const Vec2& p0, const Vec2& p1, const Vec2& q0, const Vec2& q1) {
  if (segments_cross(p0, p1, q0, q1)) return 0.0;
  auto point_seg = [](const Vec2& p, const Vec2& a, const Vec2& b) {
    const Vec2 ab = b - a;
    const double l2 = ab.squaredNorm();
    const double t = l2 > 0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
  };
  return std::min({point_seg(p0, q0, q1), point_seg(p1, q0, q1), point_seg(q0, p0, p1), point_seg(q1, p0, p1)});
}

}  // namespace

Separation polygon_separation(const Vec2& q, const Polygon& poly) {
  const Closest c = closest_on_boundary(q, poly);
  const double d = std::sqrt(c.dist2);
  Separation s;
  if (d == 0.0) {
    s.distance = 0.0;
    s.gradient = c.edge_normal;
    return s;
  }
  const Vec2 away = (q - c.point) / d;
  if (poly.contains(q)) {
    s.distance = -d;
    s.gradient = -away;
  } else {
    s.distance = d;
    s.gradient = away;
  }
  return s;
}

Separation min_separation_with_gradient(const Vec2& q, const ObstacleField& field) {
  Separation best;
  for (const auto& poly : field.polygons) {
    const Separation s = polygon_separation(q, poly);
    if (s.distance < best.distance) best = s;
  }
  return best;
}

double min_separation(const Vec2& q, const ObstacleField& field) {
  return min_separation_with_gradient(q, field).distance;
}

ObstacleCostField::ObstacleCostField(ObstacleField field, double epsilon)
    : field_(std::move(field)), epsilon_(epsilon) {
  if (!(epsilon > 0)) throw PreconditionError("cost influence radius must be positive");
}

CostSample ObstacleCostField::operator()(const Vec2& q) const {
  const Separation s = min_separation_with_gradient(q, field_);
  if (!std::isfinite(s.distance)) return {};
  const auto [c, dc] = chomp_cost(s.distance, epsilon_);
  return {c, dc * s.gradient};
}

bool segment_clear(const Vec2& a, const Vec2& b, const ObstacleField& field, double margin) {
  for (const auto& poly : field.polygons) {
    if (poly.contains(a) || poly.contains(b)) return false;
    const std::size_t n = poly.vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& p = poly.vertices[i];
      const Vec2& q = poly.vertices[(i + 1) % n];
      if (segments_cross(a, b, p, q)) return false;
      if (margin > 0 && segment_segment_distance(a, b, p, q) < margin) return false;
    }
  }
  return true;
}

}  // namespace pheno::terrain
