#pragma once

#include "pheno/farm_map.hpp"
#include "pheno/geometry.hpp"
#include "pheno/global_planner.hpp"
#include "pheno/local_planner.hpp"
#include "pheno/radiance.hpp"
#include "pheno/scene.hpp"
#include "pheno/terrain.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pheno::pipeline {

namespace fs = std::filesystem;

/// An error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct CaptureConfig {
  int width = 24;
  int height = 24;
  double fov_y = 1.4;            // rad
  int ha_views = 30;             // orbit views, alternating between two radii
  int eval_views = 8;            // held-out orbit views for PSNR
  double mast_height = 0.6;      // camera height as a fraction of plant height
  int reference_samples = 256;
  int flank_views = 6;           // preset viewpoints per instance flank
  double capture_radius = 0.35;  // max distance from a preset viewpoint to the trajectory [m]
};

struct FieldConfig {
  int resolution = 24;
  double init_sigma = 0.1;
  double roi_inflation = 1.2;
  int eval_samples = 64;
  radiance::TrainConfig train;
};

struct MeshConfig {
  int resolution = 40;
  std::optional<double> threshold;  // default: half the 99th-percentile density
};

struct RunConfig {
  terrain::CostFieldConfig terrain;
  double cell_size = 0.1;
  farm_map::GraphConfig graph;
  global_planner::PlannerConfig planner;
  local_planner::LocalPlannerConfig local;
  CaptureConfig capture;
  FieldConfig field;
  MeshConfig mesh;
  std::vector<std::string> view_modes{"HA", "RA"};
  std::vector<double> occ_weights{0.0, 0.01};
  std::optional<Vec2> start;
  std::uint64_t seed = 1;

  void validate() const;
  /// Seeds every seeded stage from `seed`.
  void apply_seed(std::uint64_t s);
};

/// Reads a config file; absent keys keep their defaults. The "farm" key, if
/// present, is returned separately as a farm spec.
RunConfig config_from_json(const std::string& text, std::optional<scene::FarmSpec>* farm = nullptr);
std::string config_to_json(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Planning

struct PlanResult {
  terrain::TraversabilityGrid grid;
  terrain::ObstacleField obstacles;
  farm_map::GraphMap graph;
  global_planner::GlobalPath path;
  std::optional<local_planner::LocalPlan> local;
  Vec2 start = Vec2::Zero();
};

/// Corner of the plants' bounding box pushed 1.5 m outward.
Vec2 default_start(const std::vector<farm_map::Instance>& instances);

/// Structure map, graph and global path over `targets` (may be empty).
PlanResult plan_global(const std::vector<farm_map::Instance>& instances, const terrain::TerrainCloud& cloud,
                       const std::vector<int>& targets, const RunConfig& cfg);
/// Local trajectories for an existing global path.
void plan_trajectory(PlanResult& plan, const RunConfig& cfg);

/// Node ids of a plan written by global_planner::plan_to_json.
std::vector<int> plan_node_ids(const std::string& plan_json);

std::string semantic_map_json(const std::vector<farm_map::Instance>& instances,
                              const terrain::TraversabilityGrid& grid);

// ---------------------------------------------------------------------------
// Capture

/// Trajectory samples of one local segment, with the preset viewpoints of a
/// flank sweep when the segment is one.
struct ViewTrack {
  std::optional<int> instance_id;
  std::vector<Vec2> samples;
  std::vector<Vec2> viewpoints;
};

std::vector<ViewTrack> view_tracks(const local_planner::LocalPlan& plan);
std::vector<ViewTrack> view_tracks_from_json(const std::string& trajectory_json);

/// Robot views: for each preset viewpoint on the instance's four flanks (the
/// node box for `clearance`), the nearest trajectory sample if it lies within
/// the capture radius, looking at the plant.
std::vector<radiance::Camera> ra_cameras(const std::vector<ViewTrack>& tracks, const farm_map::Instance& inst,
                                         double ground, double clearance, const CaptureConfig& cfg);
/// Handheld baseline: full orbit alternating between two radii and heights.
std::vector<radiance::Camera> ha_cameras(const farm_map::Instance& inst, double ground, const CaptureConfig& cfg);
/// Held-out orbit views used for evaluation.
std::vector<radiance::Camera> eval_cameras(const farm_map::Instance& inst, double ground, const CaptureConfig& cfg);

/// Detection box from the ground to the plant top, inflated about its centre.
radiance::Aabb instance_roi(const farm_map::Instance& inst, double ground, double inflation);

// ---------------------------------------------------------------------------
// Reconstruction

struct TrainingRun {
  std::string view_mode;
  double occ_weight = 0.0;
  int views = 0;
  double psnr = 0.0;
  double train_time_s = 0.0;
  radiance::TrainResult metrics;
  radiance::VoxelRadianceField field;
};

TrainingRun train_and_evaluate(const std::vector<radiance::PosedImage>& views,
                               const std::vector<radiance::PosedImage>& eval, const radiance::Aabb& roi,
                               const std::string& view_mode, double occ_weight, std::uint64_t seed,
                               const FieldConfig& cfg);

geometry::TriMesh extract_mesh(const radiance::VoxelRadianceField& field, const MeshConfig& cfg,
                               double* threshold_used = nullptr);

// ---------------------------------------------------------------------------
// End to end

struct RunOptions {
  int workers = 1;
  bool timing = false;  // record wall-clock training time (otherwise reported as NA)
};

struct InstanceStatus {
  int id = 0;
  std::string status;  // sampled | incomplete | unreachable | not sampled
  std::string detail;
};

struct RunReport {
  int exit_code = 0;  // 0 success, 2 partial
  std::vector<int> covered;
  std::vector<int> unreachable;
  double path_length = 0.0;
  std::vector<InstanceStatus> instances;
};

/// farm_map -> global_planner -> local_planner -> capture -> train -> mesh,
/// persisting the hierarchy map under `out`.
RunReport run_pipeline(const scene::FarmScene& scene, const std::vector<int>& targets, const RunConfig& cfg,
                       const fs::path& out, const RunOptions& opts);

/// Collects per-instance summaries of a run directory into report.csv and
/// report.dat; returns a human-readable summary.
std::string write_report(const fs::path& run_dir);

}  // namespace pheno::pipeline
