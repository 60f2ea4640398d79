#include "pheno/pipeline.hpp"

#include "pheno/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace pheno::pipeline {

using nlohmann::json;

namespace {

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

void get_vec2(const json& j, const char* key, Vec2& out) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2) throw ParseError(std::string(key) + " must be [x, y]", 0);
  out = Vec2(a[0].get<double>(), a[1].get<double>());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Directory name of one training configuration, e.g. "RA_occ0.01".
std::string run_name(const std::string& mode, double occ) { return mode + "_occ" + fmt("%g", occ); }

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

global_planner::PlanningContext make_context(const PlanResult& plan, const RunConfig& cfg) {
  global_planner::PlanningContext ctx;
  ctx.graph = &plan.graph;
  ctx.terrain = &plan.grid;
  ctx.config = cfg.planner;
  ctx.config.gate = cfg.graph.gate;
  ctx.start = plan.start;
  return ctx;
}

Vec3 plant_target(const farm_map::Instance& inst, double ground) {
  return Vec3(inst.center.x(), inst.center.y(), ground + 0.5 * inst.height);
}

/// Orbit radii of the handheld capture.
std::pair<double, double> orbit_radii(const farm_map::Instance& inst) {
  const double r = std::max({inst.half_extents.x(), inst.half_extents.y(), 0.5 * inst.height});
  return {2.2 * r, 3.0 * r};
}

std::vector<radiance::PosedImage> render_views(const radiance::AnalyticScene& plant,
                                               const std::vector<radiance::Camera>& cams, int K) {
  std::vector<radiance::PosedImage> out;
  out.reserve(cams.size());
  for (const auto& c : cams) out.push_back(radiance::render_reference(plant, c, K));
  return out;
}

/// Images go to base/sub; the pose list (with paths relative to base) to base/poses_name.
void write_views(const fs::path& base, const std::string& sub, const std::string& poses_name,
                 const std::vector<radiance::PosedImage>& views) {
  std::vector<io::PoseRecord> poses;
  for (std::size_t i = 0; i < views.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "view_%03zu.ppm", i);
    io::write_ppm(base / sub / name, views[i].image);
    poses.push_back({sub + "/" + name, views[i].camera});
  }
  io::write_text(base / poses_name, io::poses_to_json(poses));
}

json vec_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  if (!(cell_size > 0.0)) throw PreconditionError("cell_size must be positive");
  local.optimizer.validate();
  field.train.validate();
  if (field.resolution < 2) throw PreconditionError("field resolution must be at least 2");
  if (!(field.roi_inflation >= 1.0)) throw PreconditionError("roi_inflation must be at least 1");
  if (field.eval_samples < 1) throw PreconditionError("eval_samples must be positive");
  if (mesh.resolution < 2) throw PreconditionError("mesh resolution must be at least 2");
  if (capture.width < 1 || capture.height < 1) throw PreconditionError("capture size must be positive");
  if (!(capture.fov_y > 0.0 && capture.fov_y < kPi)) throw PreconditionError("fov_y must lie in (0, pi)");
  if (capture.ha_views < 2 || capture.eval_views < 1) throw PreconditionError("too few capture views");
  if (capture.reference_samples < 1) throw PreconditionError("reference_samples must be positive");
  if (capture.flank_views < 1 || !(capture.capture_radius > 0.0)) throw PreconditionError("invalid RA capture settings");
  if (view_modes.empty() || occ_weights.empty()) throw PreconditionError("no training configurations");
  for (const auto& m : view_modes)
    if (m != "HA" && m != "RA") throw PreconditionError("unknown view mode " + m);
  for (double w : occ_weights)
    if (!(w >= 0.0)) throw PreconditionError("occlusion weights must be non-negative");
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  local.seed = s;
  local.view.rrt.seed = s;
  field.train.seed = s;
}

RunConfig config_from_json(const std::string& text, std::optional<scene::FarmSpec>* farm) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), 0);
  }
  RunConfig c;
  try {
    get(j, "cell_size", c.cell_size);
    if (j.contains("terrain")) {
      const auto& t = j["terrain"];
      get(t, "epsilon", c.terrain.epsilon);
      get(t, "s_crit", c.terrain.s_crit);
      get(t, "lambda_crit", c.terrain.lambda_crit);
      get(t, "alpha_s", c.terrain.alpha_s);
      get(t, "alpha_lambda", c.terrain.alpha_lambda);
      get(t, "slope_window", c.terrain.slope_window);
      get(t, "body_clearance", c.terrain.body_clearance);
      get(t, "ground_percentile", c.terrain.ground_percentile);
    }
    if (j.contains("graph")) {
      const auto& g = j["graph"];
      get(g, "lateral_tolerance", c.graph.rows.lateral_tolerance);
      get(g, "row_margin", c.graph.rows.row_margin);
      get(g, "clearance", c.graph.rows.clearance);
      get(g, "max_refinements", c.graph.rows.max_refinements);
      get_vec2(g, "default_axis", c.graph.rows.default_axis);
      get(g, "max_mean", c.graph.gate.max_mean);
      get(g, "obstacle_level", c.graph.gate.obstacle_level);
    }
    if (j.contains("planner")) {
      const auto& p = j["planner"];
      get(p, "cover_min_corners", c.planner.cover_min_corners);
      get(p, "max_heading_change", c.planner.max_heading_change);
      std::string metric = "euclidean";
      get(p, "metric", metric);
      if (metric == "euclidean") c.planner.metric = global_planner::DistanceMetric::kEuclidean;
      else if (metric == "graph") c.planner.metric = global_planner::DistanceMetric::kGraph;
      else throw ParseError("planner.metric must be euclidean or graph", 0);
    }
    if (j.contains("local")) {
      const auto& l = j["local"];
      get(l, "alpha_s", c.local.optimizer.alpha_s);
      get(l, "alpha_c", c.local.optimizer.alpha_c);
      get(l, "alpha_o", c.local.optimizer.alpha_o);
      get(l, "learning_rate", c.local.optimizer.learning_rate);
      get(l, "max_iters", c.local.optimizer.max_iters);
      get(l, "convergence_tol", c.local.optimizer.convergence_tol);
      get(l, "epsilon", c.local.epsilon);
      get(l, "control_spacing", c.local.control_spacing);
      get(l, "max_control_points", c.local.max_control_points);
      get(l, "v_sample", c.local.v_sample);
      get(l, "v_transit", c.local.v_transit);
      get(l, "n_views", c.local.view.n_views);
      get(l, "view_tol", c.local.view.view_tol);
      get(l, "rrt_goal_bias", c.local.view.rrt.goal_bias);
      get(l, "rrt_step", c.local.view.rrt.step);
      get(l, "rrt_max_samples", c.local.view.rrt.max_samples);
      get(l, "rrt_margin", c.local.view.rrt.margin);
      get(l, "transit_cost_weight", c.local.transit.cost_weight);
      get(l, "degree", c.local.spline.degree);
      get(l, "samples_per_span", c.local.spline.samples_per_span);
    }
    c.local.transit.obstacle_level = c.graph.gate.obstacle_level;
    if (j.contains("capture")) {
      const auto& k = j["capture"];
      get(k, "width", c.capture.width);
      get(k, "height", c.capture.height);
      get(k, "fov_y", c.capture.fov_y);
      get(k, "ha_views", c.capture.ha_views);
      get(k, "eval_views", c.capture.eval_views);
      get(k, "mast_height", c.capture.mast_height);
      get(k, "reference_samples", c.capture.reference_samples);
      get(k, "flank_views", c.capture.flank_views);
      get(k, "capture_radius", c.capture.capture_radius);
    }
    if (j.contains("field")) {
      const auto& f = j["field"];
      get(f, "resolution", c.field.resolution);
      get(f, "init_sigma", c.field.init_sigma);
      get(f, "roi_inflation", c.field.roi_inflation);
      get(f, "eval_samples", c.field.eval_samples);
      get(f, "epochs", c.field.train.epochs);
      get(f, "batch_rays", c.field.train.batch_rays);
      get(f, "samples", c.field.train.samples);
      get(f, "lr_density", c.field.train.lr_density);
      get(f, "lr_color", c.field.train.lr_color);
      get(f, "momentum", c.field.train.momentum);
      get(f, "occ_prefix_frac", c.field.train.occ.prefix_frac);
      get(f, "jitter", c.field.train.jitter);
    }
    if (j.contains("mesh")) {
      const auto& m = j["mesh"];
      get(m, "resolution", c.mesh.resolution);
      if (m.contains("threshold") && !m["threshold"].is_null()) c.mesh.threshold = m["threshold"].get<double>();
    }
    get(j, "view_modes", c.view_modes);
    get(j, "occ_weights", c.occ_weights);
    if (j.contains("start") && !j["start"].is_null()) {
      Vec2 s;
      get_vec2(j, "start", s);
      c.start = s;
    }
    std::uint64_t seed = c.seed;
    get(j, "seed", seed);
    c.apply_seed(seed);
    if (farm && j.contains("farm")) *farm = scene::farm_spec_from_json(j["farm"].dump());
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what(), 0);
  }
  c.validate();
  return c;
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["cell_size"] = c.cell_size;
  j["terrain"] = {{"epsilon", c.terrain.epsilon},           {"s_crit", c.terrain.s_crit},
                  {"lambda_crit", c.terrain.lambda_crit},   {"alpha_s", c.terrain.alpha_s},
                  {"alpha_lambda", c.terrain.alpha_lambda}, {"slope_window", c.terrain.slope_window},
                  {"body_clearance", c.terrain.body_clearance},
                  {"ground_percentile", c.terrain.ground_percentile}};
  j["graph"] = {{"lateral_tolerance", c.graph.rows.lateral_tolerance},
                {"row_margin", c.graph.rows.row_margin},
                {"clearance", c.graph.rows.clearance},
                {"max_refinements", c.graph.rows.max_refinements},
                {"default_axis", vec_json(c.graph.rows.default_axis)},
                {"max_mean", c.graph.gate.max_mean},
                {"obstacle_level", c.graph.gate.obstacle_level}};
  j["planner"] = {{"cover_min_corners", c.planner.cover_min_corners},
                  {"max_heading_change", c.planner.max_heading_change},
                  {"metric", c.planner.metric == global_planner::DistanceMetric::kGraph ? "graph" : "euclidean"}};
  j["local"] = {{"alpha_s", c.local.optimizer.alpha_s},
                {"alpha_c", c.local.optimizer.alpha_c},
                {"alpha_o", c.local.optimizer.alpha_o},
                {"learning_rate", c.local.optimizer.learning_rate},
                {"max_iters", c.local.optimizer.max_iters},
                {"convergence_tol", c.local.optimizer.convergence_tol},
                {"epsilon", c.local.epsilon},
                {"control_spacing", c.local.control_spacing},
                {"max_control_points", c.local.max_control_points},
                {"v_sample", c.local.v_sample},
                {"v_transit", c.local.v_transit},
                {"n_views", c.local.view.n_views},
                {"view_tol", c.local.view.view_tol},
                {"rrt_goal_bias", c.local.view.rrt.goal_bias},
                {"rrt_step", c.local.view.rrt.step},
                {"rrt_max_samples", c.local.view.rrt.max_samples},
                {"rrt_margin", c.local.view.rrt.margin},
                {"transit_cost_weight", c.local.transit.cost_weight},
                {"degree", c.local.spline.degree},
                {"samples_per_span", c.local.spline.samples_per_span}};
  j["capture"] = {{"width", c.capture.width},
                  {"height", c.capture.height},
                  {"fov_y", c.capture.fov_y},
                  {"ha_views", c.capture.ha_views},
                  {"eval_views", c.capture.eval_views},
                  {"mast_height", c.capture.mast_height},
                  {"reference_samples", c.capture.reference_samples},
                  {"flank_views", c.capture.flank_views},
                  {"capture_radius", c.capture.capture_radius}};
  j["field"] = {{"resolution", c.field.resolution},
                {"init_sigma", c.field.init_sigma},
                {"roi_inflation", c.field.roi_inflation},
                {"eval_samples", c.field.eval_samples},
                {"epochs", c.field.train.epochs},
                {"batch_rays", c.field.train.batch_rays},
                {"samples", c.field.train.samples},
                {"lr_density", c.field.train.lr_density},
                {"lr_color", c.field.train.lr_color},
                {"momentum", c.field.train.momentum},
                {"occ_prefix_frac", c.field.train.occ.prefix_frac},
                {"jitter", c.field.train.jitter}};
  j["mesh"] = {{"resolution", c.mesh.resolution},
               {"threshold", c.mesh.threshold ? json(*c.mesh.threshold) : json(nullptr)}};
  j["view_modes"] = c.view_modes;
  j["occ_weights"] = c.occ_weights;
  j["start"] = c.start ? vec_json(*c.start) : json(nullptr);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Planning

Vec2 default_start(const std::vector<farm_map::Instance>& instances) {
  if (instances.empty()) return Vec2::Zero();
  Vec2 lo = Vec2::Constant(kInf);
  for (const auto& inst : instances)
    for (const auto& c : inst.corners()) lo = lo.cwiseMin(c);
  return lo - Vec2(1.5, 1.5);
}

PlanResult plan_global(const std::vector<farm_map::Instance>& instances, const terrain::TerrainCloud& cloud,
                       const std::vector<int>& targets, const RunConfig& cfg) {
  PlanResult plan;
  in_stage("terrain", [&] {
    plan.grid = terrain::build_grid(cloud, cfg.terrain, cfg.cell_size);
    plan.obstacles = terrain::extract_obstacles(plan.grid, cfg.graph.gate.obstacle_level);
  });
  in_stage("farm_map", [&] {
    const auto groups = farm_map::detect_rows(instances, cfg.graph.rows);
    plan.graph = farm_map::build_graph(instances, groups, plan.grid, cfg.graph);
  });
  plan.start = cfg.start.value_or(default_start(instances));
  in_stage("global_planner", [&] {
    plan.path = global_planner::generate_global_path(targets, make_context(plan, cfg));
  });
  return plan;
}

void plan_trajectory(PlanResult& plan, const RunConfig& cfg) {
  in_stage("local_planner", [&] {
    plan.local = local_planner::plan_local(plan.path, make_context(plan, cfg), plan.obstacles, cfg.local);
  });
}

std::vector<int> plan_node_ids(const std::string& plan_json) {
  try {
    const json j = json::parse(plan_json);
    std::vector<int> ids;
    for (const auto& n : j.at("nodes")) ids.push_back(n.at("id").get<int>());
    return ids;
  } catch (const json::exception& e) {
    throw ParseError(std::string("plan: ") + e.what(), 0);
  }
}

std::string semantic_map_json(const std::vector<farm_map::Instance>& instances,
                              const terrain::TraversabilityGrid& grid) {
  json arr = json::array();
  for (const auto& inst : instances) {
    std::optional<double> ground;
    if (auto cell = grid.cell_of(inst.center)) {
      const auto& r = grid.at(cell->first, cell->second);
      if (r.point_count > 0) ground = r.ground;
    }
    json corners = json::array();
    for (const auto& c : inst.corners()) corners.push_back(vec_json(c));
    arr.push_back({{"id", inst.id},
                   {"center", vec_json(inst.center)},
                   {"half_extents", vec_json(inst.half_extents)},
                   {"yaw", inst.yaw},
                   {"height", inst.height},
                   {"corners", corners},
                   {"ground", ground ? json(*ground) : json(nullptr)}});
  }
  // Footprint raster: instance id of the box containing each cell centre, 0 elsewhere.
  json labels = json::array();
  for (int iy = 0; iy < grid.height(); ++iy) {
    json row = json::array();
    for (int ix = 0; ix < grid.width(); ++ix) {
      const Vec2 c = grid.cell_center(ix, iy);
      int label = 0;
      for (const auto& inst : instances)
        if (inst.strictly_contains(c)) {
          label = inst.id;
          break;
        }
      row.push_back(label);
    }
    labels.push_back(row);
  }
  json doc = {{"instances", arr},
              {"labels", labels},
              {"grid",
               {{"origin", vec_json(grid.origin())},
                {"cell_size", grid.cell_size()},
                {"width", grid.width()},
                {"height", grid.height()}}}};
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Capture

std::vector<ViewTrack> view_tracks(const local_planner::LocalPlan& plan) {
  std::vector<ViewTrack> out;
  for (const auto& s : plan.segments) {
    ViewTrack t;
    if (s.kind == local_planner::SegmentKind::kViewpoint) t.instance_id = s.instance_id;
    for (const auto& cs : s.curve.samples) t.samples.push_back(cs.point);
    t.viewpoints = s.viewpoints;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<ViewTrack> view_tracks_from_json(const std::string& trajectory_json) {
  std::vector<ViewTrack> out;
  try {
    const json j = json::parse(trajectory_json);
    for (const auto& s : j.at("segments")) {
      ViewTrack t;
      if (s.at("kind") == "viewpoint" && !s.at("instance_id").is_null()) t.instance_id = s.at("instance_id").get<int>();
      for (const auto& p : s.at("samples")) t.samples.emplace_back(p.at("x").get<double>(), p.at("y").get<double>());
      for (const auto& v : s.at("viewpoints")) t.viewpoints.emplace_back(v[0].get<double>(), v[1].get<double>());
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory: ") + e.what(), 0);
  }
  return out;
}

std::vector<radiance::Camera> ra_cameras(const std::vector<ViewTrack>& tracks, const farm_map::Instance& inst,
                                         double ground, double clearance, const CaptureConfig& cfg) {
  std::vector<radiance::Camera> cams;
  std::vector<Vec2> used;
  const Vec3 target = plant_target(inst, ground);
  const auto corners = inst.corners(farm_map::node_inflation(clearance));
  for (int c = 0; c < 4; ++c) {
    for (const Vec2& vp : local_planner::preset_viewpoints(corners[c], corners[(c + 1) % 4], cfg.flank_views)) {
      double best = kInf;
      Vec2 p = Vec2::Zero();
      for (const auto& t : tracks)
        for (const auto& q : t.samples)
          if (const double d = (q - vp).norm(); d < best) {
            best = d;
            p = q;
          }
      if (best > cfg.capture_radius) continue;
      const bool dup = std::any_of(used.begin(), used.end(), [&](const Vec2& u) { return (u - p).norm() < 1e-9; });
      if (dup) continue;
      used.push_back(p);
      const Vec3 eye(p.x(), p.y(), ground + cfg.mast_height * inst.height);
      cams.push_back(radiance::look_at(eye, target, cfg.width, cfg.height, cfg.fov_y));
    }
  }
  return cams;
}

std::vector<radiance::Camera> ha_cameras(const farm_map::Instance& inst, double ground, const CaptureConfig& cfg) {
  const auto [r1, r2] = orbit_radii(inst);
  const Vec3 target = plant_target(inst, ground);
  std::vector<radiance::Camera> cams;
  for (int i = 0; i < cfg.ha_views; ++i) {
    const double a = inst.yaw + 2.0 * kPi * i / cfg.ha_views;
    const bool inner = i % 2 == 0;
    const Vec2 xy = inst.center + (inner ? r1 : r2) * unit_from_angle(a);
    const double z = ground + (inner ? 0.5 : 0.9) * inst.height;
    cams.push_back(radiance::look_at(Vec3(xy.x(), xy.y(), z), target, cfg.width, cfg.height, cfg.fov_y));
  }
  return cams;
}

std::vector<radiance::Camera> eval_cameras(const farm_map::Instance& inst, double ground, const CaptureConfig& cfg) {
  const auto [r1, r2] = orbit_radii(inst);
  const double r = 0.5 * (r1 + r2);
  const Vec3 target = plant_target(inst, ground);
  std::vector<radiance::Camera> cams;
  for (int i = 0; i < cfg.eval_views; ++i) {
    const double a = inst.yaw + 2.0 * kPi * (i + 0.5) / cfg.eval_views + 0.1;
    const Vec2 xy = inst.center + r * unit_from_angle(a);
    const double z = ground + 0.7 * inst.height;
    cams.push_back(radiance::look_at(Vec3(xy.x(), xy.y(), z), target, cfg.width, cfg.height, cfg.fov_y));
  }
  return cams;
}

radiance::Aabb instance_roi(const farm_map::Instance& inst, double ground, double inflation) {
  Vec2 lo = Vec2::Constant(kInf), hi = Vec2::Constant(-kInf);
  for (const auto& c : inst.corners()) {
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  radiance::Aabb box{Vec3(lo.x(), lo.y(), ground), Vec3(hi.x(), hi.y(), ground + inst.height)};
  return box.inflated(inflation);
}

// ---------------------------------------------------------------------------
// Reconstruction

TrainingRun train_and_evaluate(const std::vector<radiance::PosedImage>& views,
                               const std::vector<radiance::PosedImage>& eval, const radiance::Aabb& roi,
                               const std::string& view_mode, double occ_weight, std::uint64_t seed,
                               const FieldConfig& cfg) {
  if (views.empty()) throw PreconditionError("no training views");
  if (eval.empty()) throw PreconditionError("no evaluation views");
  TrainingRun run;
  run.view_mode = view_mode;
  run.occ_weight = occ_weight;
  run.views = static_cast<int>(views.size());
  run.field = radiance::VoxelRadianceField(roi, Eigen::Vector3i::Constant(cfg.resolution), cfg.init_sigma);
  radiance::TrainConfig t = cfg.train;
  t.occ.weight = occ_weight;
  t.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  run.metrics = radiance::train(run.field, views, t);
  run.train_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  double sq = 0.0;
  Eigen::Index n = 0;
  for (const auto& e : eval) {
    const radiance::Image pred = radiance::render_image(run.field, e.camera, cfg.eval_samples);
    sq += (pred.rgb - e.image.rgb).squaredNorm();
    n += e.image.rgb.size();
  }
  const double m = sq / static_cast<double>(n);
  run.psnr = m > 0.0 ? -10.0 * std::log10(m) : kInf;
  return run;
}

geometry::TriMesh extract_mesh(const radiance::VoxelRadianceField& field, const MeshConfig& cfg,
                               double* threshold_used) {
  const auto vol = geometry::sample_volume(field, field.bounds(), Eigen::Vector3i::Constant(cfg.resolution));
  const double tau = cfg.threshold.value_or(geometry::default_threshold(vol));
  if (threshold_used) *threshold_used = tau;
  return geometry::colour_vertices(geometry::marching_cubes(vol, tau), field);
}

// ---------------------------------------------------------------------------
// End to end

namespace {

struct InstanceJob {
  const farm_map::Instance* inst = nullptr;
  fs::path dir;
  InstanceStatus status;
};

void process_instance(InstanceJob& job, const scene::FarmScene& scene, const std::vector<ViewTrack>& tracks,
                      const RunConfig& cfg, const RunOptions& opts) {
  const auto& inst = *job.inst;
  const double ground = scene.ground_under(inst.id);
  const auto& plant = scene.plant(inst.id);
  const int K = cfg.capture.reference_samples;

  std::map<std::string, std::vector<radiance::PosedImage>> views;
  views["RA"] = render_views(plant, ra_cameras(tracks, inst, ground, cfg.graph.rows.clearance, cfg.capture), K);
  views["HA"] = render_views(plant, ha_cameras(inst, ground, cfg.capture), K);
  const auto eval = render_views(plant, eval_cameras(inst, ground, cfg.capture), K);
  write_views(job.dir, "views", "poses.json", views["RA"]);
  write_views(job.dir, "baseline", "baseline_poses.json", views["HA"]);
  write_views(job.dir, "eval", "eval_poses.json", eval);

  const radiance::Aabb roi = instance_roi(inst, ground, cfg.field.roi_inflation);
  json runs = json::array();
  std::vector<std::string> missing;
  std::optional<TrainingRun> primary;
  std::uint64_t k = 0;
  for (const auto& mode : cfg.view_modes) {
    for (double w : cfg.occ_weights) {
      const std::string name = run_name(mode, w);
      const std::uint64_t seed = cfg.field.train.seed + 1000 * static_cast<std::uint64_t>(inst.id) + k++;
      if (views[mode].size() < 2) {
        missing.push_back(name);
        runs.push_back({{"view_mode", mode}, {"occ_weight", w}, {"views", views[mode].size()},
                        {"status", "incomplete"}, {"psnr", nullptr}, {"train_time_s", nullptr}});
        continue;
      }
      TrainingRun run = train_and_evaluate(views[mode], eval, roi, mode, w, seed, cfg.field);
      io::write_text(job.dir / "runs" / name / "metrics.csv", radiance::metrics_to_csv(run.metrics));
      runs.push_back({{"view_mode", mode},
                      {"occ_weight", w},
                      {"views", run.views},
                      {"status", "sampled"},
                      {"seed", seed},
                      {"psnr", std::isfinite(run.psnr) ? json(run.psnr) : json(nullptr)},
                      {"train_time_s", opts.timing ? json(run.train_time_s) : json(nullptr)},
                      {"metrics", "runs/" + name + "/metrics.csv"}});
      // RA with the last listed weight wins, otherwise the first completed run.
      if (!primary || mode == "RA") primary = std::move(run);
    }
  }

  json summary = {{"id", inst.id},
                  {"ground", ground},
                  {"roi", {{"min", {roi.min.x(), roi.min.y(), roi.min.z()}}, {"max", {roi.max.x(), roi.max.y(), roi.max.z()}}}},
                  {"views", {{"RA", views["RA"].size()}, {"HA", views["HA"].size()}, {"eval", eval.size()}}},
                  {"runs", runs}};
  if (primary) {
    io::save_checkpoint(job.dir / "field.bin", primary->field);
    io::write_text(job.dir / "metrics.csv", radiance::metrics_to_csv(primary->metrics));
    double tau = 0.0;
    const auto mesh = extract_mesh(primary->field, cfg.mesh, &tau);
    io::write_text(job.dir / "mesh.obj", geometry::mesh_to_obj(mesh));
    summary["primary"] = {{"view_mode", primary->view_mode}, {"occ_weight", primary->occ_weight}};
    summary["mesh"] = {{"file", "mesh.obj"},
                       {"vertices", mesh.vertices.cols()},
                       {"triangles", mesh.triangles.cols()},
                       {"threshold", tau},
                       {"euler_characteristic", geometry::euler_characteristic(mesh)}};
  }
  job.status.status = missing.empty() ? "sampled" : "incomplete";
  if (!missing.empty()) {
    std::string d = "too few views for";
    for (const auto& m : missing) d += " " + m;
    job.status.detail = d;
  }
  summary["status"] = job.status.status;
  summary["detail"] = job.status.detail;
  io::write_text(job.dir / "summary.json", summary.dump(2));
}

}  // namespace

RunReport run_pipeline(const scene::FarmScene& scene, const std::vector<int>& targets, const RunConfig& cfg,
                       const fs::path& out, const RunOptions& opts) {
  cfg.validate();
  fs::create_directories(out);
  io::write_text(out / "config.json", config_to_json(cfg));
  io::write_text(out / "structure" / "scene.json", scene::scene_to_json(scene));
  io::write_text(out / "structure" / "detections.json", farm_map::detections_to_json(scene.instances));
  io::write_text(out / "structure" / "terrain.ply", io::cloud_to_ply(scene.cloud));

  PlanResult plan = plan_global(scene.instances, scene.cloud, targets, cfg);
  io::write_text(out / "structure" / "grid.csv", io::grid_to_csv(plan.grid, cfg.terrain));
  io::write_text(out / "structure" / "obstacles.json", io::obstacles_to_json(plan.obstacles));
  io::write_text(out / "structure" / "semantic.json", semantic_map_json(scene.instances, plan.grid));
  io::write_text(out / "graph.json", farm_map::graph_to_json(plan.graph));
  const auto ctx = make_context(plan, cfg);
  io::write_text(out / "plan.json", global_planner::plan_to_json(plan.path, ctx));
  io::write_text(out / "audit.jsonl", global_planner::audit_to_jsonl(plan.path));

  plan_trajectory(plan, cfg);
  io::write_text(out / "trajectory.json", local_planner::local_plan_to_json(*plan.local, cfg.local));
  const auto tracks = view_tracks(*plan.local);

  RunReport report;
  report.covered = plan.path.covered_instances;
  report.unreachable = plan.path.unreachable_instances;
  report.path_length = plan.path.total_length;

  const std::set<int> covered(report.covered.begin(), report.covered.end());
  const std::set<int> unreachable(report.unreachable.begin(), report.unreachable.end());
  std::vector<InstanceJob> jobs;
  std::vector<InstanceStatus> others;
  for (const auto& inst : scene.instances) {
    if (covered.count(inst.id)) {
      InstanceJob j;
      j.inst = &inst;
      j.dir = out / "instances" / std::to_string(inst.id);
      j.status.id = inst.id;
      jobs.push_back(std::move(j));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        process_instance(jobs[i], scene, tracks, cfg, opts);
      } catch (const std::exception& e) {
        jobs[i].status.status = "incomplete";
        jobs[i].status.detail = e.what();
        json s = {{"id", jobs[i].status.id}, {"status", "incomplete"}, {"detail", e.what()}, {"runs", json::array()}};
        io::write_text(jobs[i].dir / "summary.json", s.dump(2));
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::map<int, InstanceStatus> by_id;
  for (const auto& j : jobs) by_id[j.status.id] = j.status;
  json hier = json::array();
  bool partial = !report.unreachable.empty();
  for (const auto& inst : scene.instances) {
    InstanceStatus s;
    s.id = inst.id;
    if (by_id.count(inst.id)) s = by_id[inst.id];
    else if (unreachable.count(inst.id)) s.status = "unreachable";
    else s.status = "not sampled";
    if (s.status == "incomplete") partial = true;
    const bool has_dir = by_id.count(inst.id) > 0;
    hier.push_back({{"id", s.id},
                    {"status", s.status},
                    {"target", has_dir || unreachable.count(inst.id) > 0},
                    {"detail", s.detail},
                    {"dir", has_dir ? json("instances/" + std::to_string(inst.id)) : json(nullptr)}});
    report.instances.push_back(s);
  }
  json h = {{"scene", scene.spec.name},
            {"structure",
             {{"terrain", "structure/terrain.ply"},
              {"grid", "structure/grid.csv"},
              {"obstacles", "structure/obstacles.json"},
              {"semantic", "structure/semantic.json"},
              {"graph", "graph.json"},
              {"plan", "plan.json"},
              {"trajectory", "trajectory.json"}}},
            {"view_modes", cfg.view_modes},
            {"occ_weights", cfg.occ_weights},
            {"instances", hier}};
  io::write_text(out / "hierarchy.json", h.dump(2));

  json segs = json::array();
  for (const auto& s : plan.local->segments) {
    segs.push_back({{"from", s.from_node},
                    {"to", s.to_node},
                    {"kind", s.kind == local_planner::SegmentKind::kViewpoint ? "viewpoint" : "transit"},
                    {"iterations", s.history.empty() ? 0 : static_cast<int>(s.history.size()) - 1},
                    {"initial_objective", s.history.empty() ? json(nullptr) : json(s.history.front())},
                    {"final_objective", s.history.empty() ? json(nullptr) : json(s.history.back())},
                    {"fallback", s.fallback}});
  }
  const double n_targets = static_cast<double>(report.covered.size() + report.unreachable.size());
  json run = {{"seed", cfg.seed},
              {"start", vec_json(plan.start)},
              {"covered", report.covered},
              {"unreachable", report.unreachable},
              {"coverage", n_targets > 0 ? report.covered.size() / n_targets : 1.0},
              {"path_length", report.path_length},
              {"duration_s", plan.local->duration},
              {"segments", segs}};
  io::write_text(out / "run.json", run.dump(2));

  report.exit_code = partial ? 2 : 0;
  write_report(out);
  return report;
}

std::string write_report(const fs::path& run_dir) {
  json h;
  try {
    h = json::parse(io::read_text(run_dir / "hierarchy.json"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("hierarchy.json: ") + e.what(), 0);
  }
  const std::string scene = h.value("scene", "farm");
  const auto modes = h.at("view_modes").get<std::vector<std::string>>();
  const auto weights = h.at("occ_weights").get<std::vector<double>>();

  std::ostringstream csv, dat, text;
  csv << "scene,instance,view_mode,occ_weight,PSNR_dB,train_time_s,status\n";
  dat << "# instance";
  for (const auto& m : modes)
    for (double w : weights) dat << ' ' << run_name(m, w);
  dat << '\n';

  int sampled = 0, incomplete = 0, unreachable = 0;
  for (const auto& inst : h.at("instances")) {
    if (!inst.value("target", false)) continue;
    const int id = inst.at("id").get<int>();
    const std::string status = inst.at("status").get<std::string>();
    if (status == "sampled") ++sampled;
    else if (status == "unreachable") ++unreachable;
    else ++incomplete;

    std::map<std::string, json> runs;
    if (!inst.at("dir").is_null()) {
      const fs::path p = run_dir / inst.at("dir").get<std::string>() / "summary.json";
      if (fs::exists(p)) {
        const json s = json::parse(io::read_text(p));
        for (const auto& r : s.value("runs", json::array()))
          runs[run_name(r.at("view_mode").get<std::string>(), r.at("occ_weight").get<double>())] = r;
      }
    }
    dat << id;
    for (const auto& m : modes) {
      for (double w : weights) {
        const std::string name = run_name(m, w);
        std::string psnr = "NA", time = "NA", st = status == "unreachable" ? "unreachable" : "incomplete";
        if (auto it = runs.find(name); it != runs.end()) {
          const json& r = it->second;
          if (r.value("status", "") == "sampled") {
            st = "sampled";
            if (!r.at("psnr").is_null()) psnr = fmt("%.4f", r.at("psnr").get<double>());
            else psnr = "inf";
            if (!r.at("train_time_s").is_null()) time = fmt("%.3f", r.at("train_time_s").get<double>());
          }
        }
        csv << scene << ',' << id << ',' << m << ',' << fmt("%g", w) << ',' << psnr << ',' << time << ',' << st
            << '\n';
        dat << ' ' << (psnr == "NA" ? "NaN" : psnr);
      }
    }
    dat << '\n';
  }
  io::write_text(run_dir / "report.csv", csv.str());
  io::write_text(run_dir / "report.dat", dat.str());

  text << "scene " << scene << ": " << sampled << " sampled, " << incomplete << " incomplete, " << unreachable
       << " unreachable\n";
  return text.str();
}

}  // namespace pheno::pipeline
