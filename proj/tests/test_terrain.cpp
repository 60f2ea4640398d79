#include "pheno/io.hpp"
#include "pheno/terrain.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <functional>
#include <random>

using namespace pheno;
using namespace pheno::terrain;

namespace {

// Lattice of points at cell-interior offsets over [x0, x1) x [y0, y1).
TerrainCloud lattice(double x0, double x1, double y0, double y1, double spacing,
                     const std::function<double(double, double)>& z) {
  TerrainCloud c;
  for (double y = y0 + spacing / 2; y < y1; y += spacing)
    for (double x = x0 + spacing / 2; x < x1; x += spacing) c.points.emplace_back(x, y, z(x, y));
  return c;
}

GridBounds bounds(double x0, double x1, double y0, double y1, double cs) {
  return {Vec2(x0, y0), static_cast<int>(std::lround((x1 - x0) / cs)), static_cast<int>(std::lround((y1 - y0) / cs))};
}

Polygon square(Vec2 lo, double side) {
  return {{lo, lo + Vec2(side, 0), lo + Vec2(side, side), lo + Vec2(0, side)}};
}

// Independent point-to-segment distance.
double seg_dist(const Vec2& q, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double t = std::clamp((q - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (q - (a + t * ab)).norm();
}

// Signed distance oracle: boundary distance, negated inside (crossing-number test).
double signed_dist_oracle(const Vec2& q, const Polygon& p) {
  double d = kInf;
  bool inside = false;
  const auto& v = p.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    d = std::min(d, seg_dist(q, v[j], v[i]));
    if ((v[i].y() > q.y()) != (v[j].y() > q.y()) &&
        q.x() < (v[j].x() - v[i].x()) * (q.y() - v[i].y()) / (v[j].y() - v[i].y()) + v[i].x())
      inside = !inside;
  }
  return inside ? -d : d;
}

}  // namespace

TEST_CASE("flat plane gives zero risk everywhere") {
  const auto cloud = lattice(0, 3, 0, 3, 0.025, [](double, double) { return 0.0; });
  CostFieldConfig cfg;
  const auto grid = build_grid(cloud, cfg, 0.1, bounds(0, 3, 0, 3, 0.1));
  int occupied = 0;
  for (const auto& c : grid.cells()) {
    REQUIRE(c.point_count > 0);
    ++occupied;
    CHECK(c.collision == 0.0);
    CHECK(c.slope == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.step == 0.0);
    CHECK(c.upsilon == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(occupied == 900);
}

TEST_CASE("a 45 degree ramp has slope pi/4 and unit slope term") {
  const auto cloud = lattice(0, 3, 0, 3, 0.025, [](double x, double) { return x; });
  CostFieldConfig cfg;
  cfg.alpha_s = 1.0;
  cfg.s_crit = kPi / 4;
  cfg.alpha_lambda = 1e-12;  // must be positive; step term is negligible
  cfg.body_clearance = 0.5;
  const auto grid = build_grid(cloud, cfg, 0.1, bounds(0, 3, 0, 3, 0.1));
  for (int iy = 5; iy < 25; ++iy) {
    for (int ix = 5; ix < 25; ++ix) {
      const auto& c = grid.at(ix, iy);
      CHECK(std::abs(c.slope - kPi / 4) < 1e-6);
      CHECK(c.collision == 0.0);
      CHECK(std::abs(c.upsilon - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("an empty cell amid occupied ones is a negative obstacle") {
  auto cloud = lattice(0, 2, 0, 2, 0.025, [](double, double) { return 0.0; });
  std::erase_if(cloud.points, [](const Vec3& p) { return p.x() > 1.0 && p.x() < 1.1 && p.y() > 1.0 && p.y() < 1.1; });
  const auto grid = build_grid(cloud, {}, 0.1, bounds(0, 2, 0, 2, 0.1));
  CHECK(grid.at(10, 10).point_count == 0);
  CHECK(grid.at(10, 10).upsilon == kInf);
  CHECK(grid.at(9, 10).upsilon == doctest::Approx(0.0));
  CHECK(grid.upsilon_at(Vec2(-5, -5)) == kInf);
}

TEST_CASE("fit_slope matches analytic plane normals") {
  std::vector<Vec3> flat, ramp, wall;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double a = 0.1 * i, b = 0.1 * j;
      flat.emplace_back(a, b, 0.3);
      ramp.emplace_back(a, b, a);
      wall.emplace_back(1.0, a, b);
    }
  }
  CHECK(*fit_slope(flat) == doctest::Approx(0.0));
  CHECK(std::abs(*fit_slope(ramp) - kPi / 4) < 1e-12);
  CHECK(std::abs(*fit_slope(wall) - kPi / 2) < 1e-12);
  CHECK_FALSE(fit_slope({Vec3(0, 0, 0), Vec3(1, 0, 0)}));
  CHECK_FALSE(fit_slope({Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(3, 3, 3)}));
}

TEST_CASE("slope is invariant under rotation about the vertical") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 n = Vec3(0.5 * u(rng), 0.5 * u(rng), 1.0).normalized();
    std::vector<Vec3> pts;
    for (int k = 0; k < 30; ++k) {
      const double x = u(rng), y = u(rng);
      pts.emplace_back(x, y, -(n.x() * x + n.y() * y) / n.z() + 1e-3 * u(rng));
    }
    const double s0 = *fit_slope(pts);
    const Eigen::AngleAxisd rot(kPi * u(rng), Vec3::UnitZ());
    for (auto& p : pts) p = rot * p;
    CHECK(std::abs(*fit_slope(pts) - s0) < 1e-9);
  }
}

TEST_CASE("a 0.30 m curb shows as a 0.30 m step at the boundary cells") {
  const auto cloud = lattice(0, 2, 0, 2, 0.025, [](double, double y) { return y >= 1.0 ? 0.3 : 0.0; });
  CostFieldConfig cfg;
  cfg.body_clearance = 0.5;
  const auto grid = build_grid(cloud, cfg, 0.1, bounds(0, 2, 0, 2, 0.1));
  for (int ix = 0; ix < 20; ++ix) {
    CHECK(std::abs(grid.at(ix, 9).step - 0.30) < 1e-9);
    CHECK(std::abs(grid.at(ix, 10).step - 0.30) < 1e-9);
    CHECK(grid.at(ix, 5).step == 0.0);
    CHECK(grid.at(ix, 15).step == 0.0);
  }
}

TEST_CASE("an isolated occupied cell has zero step") {
  TraversabilityGrid g({0, 0}, 0.1, 3, 3);
  g.at(1, 1).point_count = 4;
  g.at(1, 1).ground = 2.0;
  CHECK(step_at(g, 1, 1) == 0.0);
}

TEST_CASE("Upsilon recomposes exactly from stored risks") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 0.05);
  auto cloud = lattice(0, 4, 0, 4, 0.03, [&](double x, double y) {
    return 0.2 * std::sin(2 * x) * std::cos(3 * y) + (x > 2.0 && y > 2.0 ? 0.2 : 0.0);
  });
  for (auto& p : cloud.points) p.z() += std::abs(n(rng)) * (p.x() > 3.0 ? 10.0 : 1.0);
  CostFieldConfig cfg;
  const auto grid = build_grid(cloud, cfg, 0.1, bounds(0, 4, 0, 4, 0.1));
  std::uniform_int_distribution<int> cell(0, 39);
  int checked = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto& c = grid.at(cell(rng), cell(rng));
    if (!std::isfinite(c.upsilon)) continue;
    const double oracle = c.collision + cfg.alpha_s * c.slope / cfg.s_crit + cfg.alpha_lambda * c.step / cfg.lambda_crit;
    CHECK(std::abs(c.upsilon - oracle) < 1e-12);
    ++checked;
  }
  CHECK(checked > 900);
}

TEST_CASE("grid build is bit-identical across runs") {
  auto cloud = lattice(0, 2, 0, 2, 0.03, [](double x, double y) { return 0.1 * std::sin(5 * x + y); });
  const auto a = build_grid(cloud, {}, 0.1);
  const auto b = build_grid(cloud, {}, 0.1);
  REQUIRE(a.cells().size() == b.cells().size());
  for (std::size_t i = 0; i < a.cells().size(); ++i) {
    CHECK(std::memcmp(&a.cells()[i].upsilon, &b.cells()[i].upsilon, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.cells()[i].slope, &b.cells()[i].slope, sizeof(double)) == 0);
  }
}

TEST_CASE("extract_obstacles traces cell blocks to CCW polygons") {
  auto grid = TraversabilityGrid::flat({0, 0}, 0.1, 10, 10);
  CHECK(extract_obstacles(grid, 2.0).empty());

  grid.at(3, 3).upsilon = 5.0;
  auto f = extract_obstacles(grid, 2.0);
  REQUIRE(f.polygons.size() == 1);
  CHECK(f.polygons[0].vertices.size() == 4);
  CHECK(f.polygons[0].signed_area() == doctest::Approx(0.01));

  grid = TraversabilityGrid::flat({0, 0}, 0.1, 10, 10);
  for (int ix = 4; ix < 6; ++ix)
    for (int iy = 4; iy < 6; ++iy) grid.at(ix, iy).upsilon = kInf;
  f = extract_obstacles(grid, 2.0);
  REQUIRE(f.polygons.size() == 1);
  const auto& v = f.polygons[0].vertices;
  CHECK(v.size() == 4);
  Vec2 lo = v[0], hi = v[0];
  for (const auto& p : v) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  CHECK((hi - lo - Vec2(0.2, 0.2)).norm() < 1e-12);
  CHECK(f.polygons[0].signed_area() == doctest::Approx(0.04));
}

TEST_CASE("obstacle polygons cover exactly the obstacle cells") {
  std::mt19937_64 rng(13);
  std::bernoulli_distribution blocked(0.25);
  for (int trial = 0; trial < 20; ++trial) {
    auto grid = TraversabilityGrid::flat({-1, 2}, 0.2, 16, 12);
    for (int iy = 0; iy < grid.height(); ++iy)
      for (int ix = 0; ix < grid.width(); ++ix)
        if (blocked(rng)) grid.at(ix, iy).upsilon = 3.0;
    const auto f = extract_obstacles(grid, 2.0);
    for (const auto& p : f.polygons) {
      CHECK(p.vertices.size() >= 3);
      CHECK(p.signed_area() > 0);
    }
    // Enclosed free pockets are absorbed, so only check obstacle cells and
    // free cells connected to the border.
    for (int iy = 0; iy < grid.height(); ++iy) {
      for (int ix = 0; ix < grid.width(); ++ix) {
        const Vec2 c = grid.cell_center(ix, iy);
        const bool in_any = std::any_of(f.polygons.begin(), f.polygons.end(), [&](const Polygon& p) { return p.contains(c); });
        if (grid.at(ix, iy).upsilon >= 2.0) CHECK(in_any);
        if (grid.upsilon(ix, iy) < 2.0 &&
            (ix == 0 || iy == 0 || ix == grid.width() - 1 || iy == grid.height() - 1))
          CHECK_FALSE(in_any);
      }
    }
  }
}

TEST_CASE("min_separation against hand-placed polygons") {
  ObstacleField f;
  f.polygons.push_back(square({0, 0}, 1.0));
  CHECK(min_separation({3.0, 0.5}, f) == doctest::Approx(2.0));
  CHECK(min_separation({1.0, 1.0}, f) == doctest::Approx(0.0));
  CHECK(min_separation({0.5, 0.5}, f) == doctest::Approx(-0.5));
  CHECK(min_separation({0.5, 0.5}, ObstacleField{}) == kInf);
}

TEST_CASE("signed separation matches the oracle and is 1-Lipschitz") {
  ObstacleField f;
  f.polygons.push_back(square({0, 0}, 1.0));
  f.polygons.push_back({{Vec2(2, 2), Vec2(4, 2.5), Vec2(3, 4), Vec2(2.5, 3)}});
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 5.0);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 a(u(rng), u(rng)), b(u(rng), u(rng));
    double oracle = kInf;
    for (const auto& p : f.polygons) oracle = std::min(oracle, signed_dist_oracle(a, p));
    CHECK(std::abs(min_separation(a, f) - oracle) < 1e-12);
    CHECK(std::abs(min_separation(a, f) - min_separation(b, f)) <= (a - b).norm() + 1e-12);
  }
}

TEST_CASE("obstacle cost piecewise values") {
  const double eps = 0.8;
  CHECK(chomp_cost(eps, eps).first == 0.0);
  CHECK(chomp_cost(eps, eps).second == 0.0);
  CHECK(chomp_cost(eps / 2, eps).first == doctest::Approx(eps / 8));
  CHECK(chomp_cost(-0.3, eps).first == doctest::Approx(0.3 + eps / 2));

  ObstacleField f;
  f.polygons.push_back(square({0, 0}, 1.0));
  const ObstacleCostField cost(f, eps);
  CHECK(cost({1.0 + eps, 0.5}).cost == 0.0);
  CHECK(cost({1.0 + eps, 0.5}).gradient.norm() == 0.0);
  CHECK(cost({1.0 + eps / 2, 0.5}).cost == doctest::Approx(eps / 8));
  CHECK(cost({0.5, 0.5}).cost == doctest::Approx(0.5 + eps / 2));
}

TEST_CASE("obstacle cost gradient matches central differences away from corners") {
  ObstacleField f;
  f.polygons.push_back(square({0, 0}, 1.0));
  f.polygons.push_back(square({2.5, 0.5}, 0.6));
  const ObstacleCostField cost(f, 0.8);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.5, 4.5);
  const double h = 1e-6;
  int checked = 0;
  while (checked < 1000) {
    const Vec2 q(u(rng), u(rng));
    bool near_corner = false;
    for (const auto& p : f.polygons)
      for (const auto& v : p.vertices) near_corner |= (q - v).norm() < 0.05;
    // The medial axis inside a polygon and the equidistant set between polygons are kinks too.
    const auto s = min_separation_with_gradient(q, f);
    double second = kInf;
    for (const auto& p : f.polygons) {
      const double d = polygon_separation(q, p).distance;
      if (d > s.distance + 1e-12) second = std::min(second, d);
    }
    if (near_corner || second - s.distance < 0.05) continue;
    bool kink = false;
    for (const auto& p : f.polygons) {
      const auto& v = p.vertices;
      if (!p.contains(q)) continue;
      std::vector<double> d;
      for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) d.push_back(seg_dist(q, v[j], v[i]));
      std::sort(d.begin(), d.end());
      kink |= d[1] - d[0] < 0.05;
    }
    if (kink) continue;
    const auto c = cost(q);
    const Vec2 fd((cost(q + Vec2(h, 0)).cost - cost(q - Vec2(h, 0)).cost) / (2 * h),
                  (cost(q + Vec2(0, h)).cost - cost(q - Vec2(0, h)).cost) / (2 * h));
    const double denom = std::max(fd.norm(), 1e-8);
    CHECK((c.gradient - fd).norm() / denom < 1e-5);
    ++checked;
  }
}

TEST_CASE("segment_clear honours the margin") {
  ObstacleField f;
  f.polygons.push_back(square({0, 0}, 1.0));
  CHECK(segment_clear({-1, 2}, {2, 2}, f, 0.5));
  CHECK_FALSE(segment_clear({-1, 2}, {2, 2}, f, 1.5));
  CHECK_FALSE(segment_clear({-1, 0.5}, {2, 0.5}, f));
}

TEST_CASE("traversability gate rejects unknown cells and high means") {
  auto grid = TraversabilityGrid::flat({0, 0}, 0.1, 50, 10);
  TraversabilityGate gate;
  CHECK(gate.passes(grid, {0.05, 0.55}, {4.95, 0.55}));
  grid.at(20, 5).upsilon = kInf;
  CHECK_FALSE(gate.passes(grid, {0.05, 0.55}, {4.95, 0.55}));
  grid = TraversabilityGrid::flat({0, 0}, 0.1, 50, 10);
  for (auto ix = 0; ix < 50; ++ix) grid.at(ix, 5).upsilon = 1.0;
  CHECK_FALSE(gate.passes(grid, {0.05, 0.55}, {4.95, 0.55}));
}

TEST_CASE("grid CSV writes infinities as inf") {
  TraversabilityGrid g({0, 0}, 0.5, 2, 1);
  g.at(0, 0).point_count = 3;
  g.at(0, 0).upsilon = 0.25;
  const std::string csv = io::grid_to_csv(g, {});
  CHECK(csv.rfind("# {", 0) == 0);
  CHECK(csv.find("inf") != std::string::npos);
  CHECK(csv.find("0.25") != std::string::npos);
}
