#pragma once

#include "pheno/farm_map.hpp"
#include "pheno/radiance.hpp"
#include "pheno/terrain.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pheno::scene {

enum class TerrainKind { kFlat, kRamp, kCurb, kNoise };

TerrainKind terrain_kind_from_string(const std::string& s);
std::string to_string(TerrainKind k);

struct TerrainSpec {
  TerrainKind kind = TerrainKind::kFlat;
  double ramp_angle = 0.1;      // rad, rising along +x
  double curb_height = 0.3;     // m
  double curb_offset = 2.0;     // curb line this far beyond the last row [m]
  double noise_amplitude = 0.02;
  double noise_wavelength = 2.0;
  double point_spacing = 0.05;  // ground lattice spacing [m]
  double margin = 3.0;          // ground extent beyond the plants [m]
};

struct LayoutSpec {
  int rows = 2;
  int plants_per_row = 3;
  double row_spacing = 3.0;
  double plant_spacing = 1.6;
  double yaw = 0.0;  // row direction
  Vec2 half_extents = Vec2(0.4, 0.4);
  double plant_height = 1.0;
  double jitter = 0.05;  // uniform position jitter [m]
  double min_gap = 0.1;  // required gap between neighbouring footprints [m]
  int max_retries = 100;
};

struct FarmSpec {
  std::string name = "farm";
  TerrainSpec terrain;
  LayoutSpec layout;
  std::uint64_t seed = 1;

  void validate() const;
};

FarmSpec farm_spec_from_json(const std::string& text);
std::string farm_spec_to_json(const FarmSpec& spec);

struct FarmScene {
  FarmSpec spec;
  std::vector<farm_map::Instance> instances;
  std::vector<radiance::AnalyticScene> plants;  // aligned with instances
  std::vector<double> ground;                   // ground height under each plant
  terrain::TerrainCloud cloud;

  const radiance::AnalyticScene& plant(int instance_id) const;
  double ground_under(int instance_id) const;
};

double terrain_height(const TerrainSpec& t, const Vec2& p, double curb_y, std::uint64_t seed);

/// Canopy ellipsoid on a trunk, standing on the ground at the instance centre.
radiance::AnalyticScene plant_model(const farm_map::Instance& inst, double ground, std::uint64_t seed);

/// Deterministic scene: jittered row layout, plant models, and a terrain cloud
/// with ground points (none under canopies), canopy surface and trunk points.
FarmScene genfarm(const FarmSpec& spec);

std::string scene_to_json(const FarmScene& scene);
/// Restores the plant models and layout; the cloud is not part of the JSON.
FarmScene scene_from_json(const std::string& text);

}  // namespace pheno::scene
