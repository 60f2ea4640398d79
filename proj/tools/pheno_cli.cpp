// Command-line front end: one subcommand per pipeline stage plus `run`.

#include "pheno/io.hpp"
#include "pheno/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <sstream>

using namespace pheno;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int workers = 1;
};

pipeline::RunConfig load_config(const Globals& g, std::optional<scene::FarmSpec>* farm = nullptr) {
  pipeline::RunConfig cfg = g.config.empty() ? pipeline::RunConfig{} : pipeline::config_from_json(io::read_text(g.config), farm);
  if (g.seed) cfg.apply_seed(*g.seed);
  return cfg;
}

std::vector<double> parse_numbers(const std::string& s, std::size_t expected, const char* what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ParseError(std::string(what) + ": not a number: " + item, 0);
    }
  }
  if (expected && v.size() != expected)
    throw ParseError(std::string(what) + ": expected " + std::to_string(expected) + " comma-separated values", 0);
  return v;
}

/// Unset means every instance; an empty string means none.
std::vector<int> resolve_targets(const std::optional<std::string>& arg, const std::vector<farm_map::Instance>& instances) {
  std::vector<int> ids;
  if (!arg) {
    for (const auto& inst : instances) ids.push_back(inst.id);
    return ids;
  }
  for (double d : parse_numbers(*arg, 0, "--targets")) ids.push_back(static_cast<int>(d));
  return ids;
}

void apply_start(pipeline::RunConfig& cfg, const std::optional<std::string>& start) {
  if (!start) return;
  const auto v = parse_numbers(*start, 2, "--start");
  cfg.start = Vec2(v[0], v[1]);
}

int exit_for(const global_planner::GlobalPath& path) { return path.unreachable_instances.empty() ? 0 : 2; }

void print_plan_summary(const global_planner::GlobalPath& path) {
  std::cout << "covered " << path.covered_instances.size() << ", unreachable " << path.unreachable_instances.size()
            << ", length " << path.total_length << " m\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phenotyping planner and reconstruction pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every seeded stage");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--workers", g.workers, "Parallel training jobs")->check(CLI::PositiveNumber);

  // genfarm
  auto* genfarm = app.add_subcommand("genfarm", "Generate a synthetic farm scene");
  std::string farm_file, terrain_kind;
  std::optional<int> rows, per_row;
  std::optional<std::string> farm_name;
  genfarm->add_option("--farm", farm_file, "Farm spec JSON (default: config \"farm\" key)")->check(CLI::ExistingFile);
  genfarm->add_option("--terrain", terrain_kind, "flat | ramp | curb | noise");
  genfarm->add_option("--rows", rows);
  genfarm->add_option("--plants-per-row", per_row);
  genfarm->add_option("--name", farm_name);

  // plan
  auto* plan = app.add_subcommand("plan", "Build the graph map and the global path");
  std::string detections, cloud;
  std::optional<std::string> targets, start;
  plan->add_option("--detections", detections)->required()->check(CLI::ExistingFile);
  plan->add_option("--cloud", cloud)->required()->check(CLI::ExistingFile);
  plan->add_option("--targets", targets, "Comma-separated instance ids (default: all)");
  plan->add_option("--start", start, "Robot start x,y");

  // optimize
  auto* optimize = app.add_subcommand("optimize", "Local trajectories for a global plan");
  std::string plan_file;
  optimize->add_option("--detections", detections)->required()->check(CLI::ExistingFile);
  optimize->add_option("--cloud", cloud)->required()->check(CLI::ExistingFile);
  optimize->add_option("--plan", plan_file)->required()->check(CLI::ExistingFile);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Render posed views of one instance");
  std::string scene_file, trajectory_file, mode = "RA";
  int instance = 0;
  simulate->add_option("--scene", scene_file)->required()->check(CLI::ExistingFile);
  simulate->add_option("--trajectory", trajectory_file, "Required for RA views")->check(CLI::ExistingFile);
  simulate->add_option("--instance", instance)->required();
  simulate->add_option("--mode", mode, "RA | HA | eval")->check(CLI::IsMember({"RA", "HA", "eval"}));

  // train-field
  auto* train = app.add_subcommand("train-field", "Train a voxel radiance field on posed views");
  std::string views_file, eval_file, bounds;
  std::optional<int> train_instance;
  std::optional<double> occ_weight;
  train->add_option("--views", views_file, "poses.json")->required()->check(CLI::ExistingFile);
  train->add_option("--eval", eval_file, "Held-out poses.json for PSNR")->check(CLI::ExistingFile);
  train->add_option("--scene", scene_file, "Scene JSON; with --instance selects the ROI")->check(CLI::ExistingFile);
  train->add_option("--instance", train_instance);
  train->add_option("--bounds", bounds, "ROI as xmin,ymin,zmin,xmax,ymax,zmax");
  train->add_option("--occ-weight", occ_weight);

  // extract-mesh
  auto* mesh = app.add_subcommand("extract-mesh", "Marching Cubes on a trained field");
  std::string field_file;
  std::optional<double> threshold;
  std::optional<int> mesh_resolution;
  mesh->add_option("--field", field_file)->required()->check(CLI::ExistingFile);
  mesh->add_option("--threshold", threshold, "Density iso-level (default: half the 99th percentile)");
  mesh->add_option("--resolution", mesh_resolution);

  // run
  auto* run = app.add_subcommand("run", "End-to-end pipeline");
  bool timing = false;
  run->add_option("--scene", scene_file, "Scene JSON (default: generate from the config farm spec)")
      ->check(CLI::ExistingFile);
  run->add_option("--targets", targets, "Comma-separated instance ids (default: all)");
  run->add_option("--start", start, "Robot start x,y");
  run->add_flag("--timing", timing, "Record training wall-clock time in the report");

  // report
  auto* report = app.add_subcommand("report", "Summarize a run directory");
  std::string run_dir;
  report->add_option("--run", run_dir)->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  const fs::path out(g.out);
  try {
    if (*genfarm) {
      std::optional<scene::FarmSpec> spec;
      load_config(g, &spec);
      if (!farm_file.empty()) spec = scene::farm_spec_from_json(io::read_text(farm_file));
      scene::FarmSpec s = spec.value_or(scene::FarmSpec{});
      if (!terrain_kind.empty()) s.terrain.kind = scene::terrain_kind_from_string(terrain_kind);
      if (rows) s.layout.rows = *rows;
      if (per_row) s.layout.plants_per_row = *per_row;
      if (farm_name) s.name = *farm_name;
      if (g.seed) s.seed = *g.seed;
      const auto sc = scene::genfarm(s);
      io::write_text(out / "detections.json", farm_map::detections_to_json(sc.instances));
      io::write_text(out / "terrain.ply", io::cloud_to_ply(sc.cloud));
      io::write_text(out / "scene.json", scene::scene_to_json(sc));
      std::cout << sc.instances.size() << " instances, " << sc.cloud.points.size() << " points\n";
      return 0;
    }

    if (*plan) {
      pipeline::RunConfig cfg = load_config(g);
      apply_start(cfg, start);
      const auto instances = farm_map::load_detections(detections);
      const auto tc = io::load_cloud(cloud);
      const auto ids = resolve_targets(targets, instances);
      const auto p = pipeline::plan_global(instances, tc, ids, cfg);
      global_planner::PlanningContext ctx{&p.graph, &p.grid, cfg.planner, p.start};
      ctx.config.gate = cfg.graph.gate;
      io::write_text(out / "plan.json", global_planner::plan_to_json(p.path, ctx));
      io::write_text(out / "graph.json", farm_map::graph_to_json(p.graph));
      io::write_text(out / "audit.jsonl", global_planner::audit_to_jsonl(p.path));
      io::write_text(out / "structure" / "grid.csv", io::grid_to_csv(p.grid, cfg.terrain));
      io::write_text(out / "structure" / "obstacles.json", io::obstacles_to_json(p.obstacles));
      io::write_text(out / "structure" / "semantic.json", pipeline::semantic_map_json(instances, p.grid));
      print_plan_summary(p.path);
      return exit_for(p.path);
    }

    if (*optimize) {
      pipeline::RunConfig cfg = load_config(g);
      const std::string plan_text = io::read_text(plan_file);
      const json pj = json::parse(plan_text);
      cfg.start = Vec2(pj.at("start")[0].get<double>(), pj.at("start")[1].get<double>());
      const auto instances = farm_map::load_detections(detections);
      auto p = pipeline::plan_global(instances, io::load_cloud(cloud), {}, cfg);
      p.path.node_ids = pipeline::plan_node_ids(plan_text);
      p.path.covered_instances = pj.at("covered").get<std::vector<int>>();
      p.path.unreachable_instances = pj.at("unreachable").get<std::vector<int>>();
      pipeline::plan_trajectory(p, cfg);
      io::write_text(out / "trajectory.json", local_planner::local_plan_to_json(*p.local, cfg.local));
      int fallbacks = 0;
      for (const auto& s : p.local->segments) fallbacks += s.fallback ? 1 : 0;
      std::cout << p.local->segments.size() << " segments, " << fallbacks << " fallbacks, duration "
                << p.local->duration << " s\n";
      return 0;
    }

    if (*simulate) {
      pipeline::RunConfig cfg = load_config(g);
      const auto sc = scene::scene_from_json(io::read_text(scene_file));
      const auto it = std::find_if(sc.instances.begin(), sc.instances.end(),
                                   [&](const farm_map::Instance& i) { return i.id == instance; });
      if (it == sc.instances.end()) throw PreconditionError("unknown instance " + std::to_string(instance));
      const double ground = sc.ground_under(instance);
      std::vector<radiance::Camera> cams;
      if (mode == "RA") {
        if (trajectory_file.empty()) throw PreconditionError("RA views need --trajectory");
        cams = pipeline::ra_cameras(pipeline::view_tracks_from_json(io::read_text(trajectory_file)), *it, ground,
                                    cfg.graph.rows.clearance, cfg.capture);
      } else if (mode == "HA") {
        cams = pipeline::ha_cameras(*it, ground, cfg.capture);
      } else {
        cams = pipeline::eval_cameras(*it, ground, cfg.capture);
      }
      if (cams.empty()) throw PreconditionError("no viewpoints for instance " + std::to_string(instance));
      std::vector<io::PoseRecord> poses;
      for (std::size_t i = 0; i < cams.size(); ++i) {
        const auto v = radiance::render_reference(sc.plant(instance), cams[i], cfg.capture.reference_samples);
        char name[48];
        std::snprintf(name, sizeof name, "views/view_%03zu.ppm", i);
        io::write_ppm(out / name, v.image);
        poses.push_back({name, v.camera});
      }
      io::write_text(out / "poses.json", io::poses_to_json(poses));
      std::cout << cams.size() << " views\n";
      return 0;
    }

    if (*train) {
      pipeline::RunConfig cfg = load_config(g);
      radiance::Aabb roi;
      if (!bounds.empty()) {
        const auto b = parse_numbers(bounds, 6, "--bounds");
        roi = {Vec3(b[0], b[1], b[2]), Vec3(b[3], b[4], b[5])};
      } else if (!scene_file.empty() && train_instance) {
        const auto sc = scene::scene_from_json(io::read_text(scene_file));
        const auto it = std::find_if(sc.instances.begin(), sc.instances.end(),
                                     [&](const farm_map::Instance& i) { return i.id == *train_instance; });
        if (it == sc.instances.end()) throw PreconditionError("unknown instance " + std::to_string(*train_instance));
        roi = pipeline::instance_roi(*it, sc.ground_under(*train_instance), cfg.field.roi_inflation);
      } else {
        throw PreconditionError("train-field needs --bounds or --scene with --instance");
      }
      const auto views = io::load_posed_images(views_file);
      const double w = occ_weight.value_or(cfg.occ_weights.back());
      radiance::VoxelRadianceField field(roi, Eigen::Vector3i::Constant(cfg.field.resolution), cfg.field.init_sigma);
      radiance::TrainConfig tc = cfg.field.train;
      tc.occ.weight = w;
      const auto result = radiance::train(field, views, tc);
      io::save_checkpoint(out / "field.bin", field);
      io::write_text(out / "metrics.csv", radiance::metrics_to_csv(result));
      if (!eval_file.empty()) {
        const auto eval = io::load_posed_images(eval_file);
        const auto r = pipeline::train_and_evaluate(views, eval, roi, "custom", w, tc.seed, cfg.field);
        std::cout << "PSNR " << r.psnr << " dB\n";
      }
      std::cout << "final L_color " << result.metrics.back().l_color << "\n";
      return 0;
    }

    if (*mesh) {
      pipeline::RunConfig cfg = load_config(g);
      if (threshold) cfg.mesh.threshold = *threshold;
      if (mesh_resolution) cfg.mesh.resolution = *mesh_resolution;
      const auto field = io::load_checkpoint(field_file);
      double tau = 0.0;
      const auto m = pipeline::extract_mesh(field, cfg.mesh, &tau);
      io::write_text(out / "mesh.obj", geometry::mesh_to_obj(m));
      io::write_text(out / "mesh.json", geometry::mesh_to_json(m));
      std::cout << m.vertices.cols() << " vertices, " << m.triangles.cols() << " triangles, threshold " << tau
                << "\n";
      return 0;
    }

    if (*run) {
      std::optional<scene::FarmSpec> spec;
      pipeline::RunConfig cfg = load_config(g, &spec);
      apply_start(cfg, start);
      scene::FarmScene sc;
      if (!scene_file.empty()) {
        // The cloud is not stored in scene.json; regenerate it from the spec.
        const auto restored = scene::scene_from_json(io::read_text(scene_file));
        sc = scene::genfarm(restored.spec);
      } else {
        scene::FarmSpec s = spec.value_or(scene::FarmSpec{});
        if (g.seed) s.seed = *g.seed;
        sc = scene::genfarm(s);
      }
      const auto ids = resolve_targets(targets, sc.instances);
      const auto r = pipeline::run_pipeline(sc, ids, cfg, out, {g.workers, timing});
      std::cout << pipeline::write_report(out);
      std::cout << "path length " << r.path_length << " m\n";
      return r.exit_code;
    }

    if (*report) {
      std::cout << pipeline::write_report(run_dir);
      return 0;
    }
  } catch (const pipeline::StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
