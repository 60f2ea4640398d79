#pragma once

#include "pheno/radiance.hpp"
#include "pheno/terrain.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pheno::io {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path);
/// Writes the file, creating parent directories.
void write_text(const fs::path& path, const std::string& text);

// Point clouds: ASCII PLY with x y z properties, or plain "x y z" lines.
terrain::TerrainCloud parse_ply(const std::string& text);
terrain::TerrainCloud parse_xyz(const std::string& text);
/// Chooses the parser from the extension (.ply, anything else is XYZ).
terrain::TerrainCloud load_cloud(const fs::path& path);
std::string cloud_to_ply(const terrain::TerrainCloud& cloud);

/// JSON header line prefixed with '#', then one row per cell, row-major.
std::string grid_to_csv(const terrain::TraversabilityGrid& grid, const terrain::CostFieldConfig& cfg);
std::string obstacles_to_json(const terrain::ObstacleField& field);

// Images: binary PPM (P6, 8-bit).
std::string encode_ppm(const radiance::Image& image);
radiance::Image decode_ppm(const std::string& bytes);
void write_ppm(const fs::path& path, const radiance::Image& image);
radiance::Image read_ppm(const fs::path& path);

std::string camera_to_json(const radiance::Camera& cam);
radiance::Camera camera_from_json(const std::string& text);

/// One entry per view: the camera plus the image file name.
struct PoseRecord {
  std::string file;
  radiance::Camera camera;
};
std::string poses_to_json(const std::vector<PoseRecord>& poses);
std::vector<PoseRecord> poses_from_json(const std::string& text);

/// Loads every view listed in poses.json, resolving image files next to it.
std::vector<radiance::PosedImage> load_posed_images(const fs::path& poses_json);

// Field checkpoints: magic, uint32 header length, JSON header, then float32
// little-endian planes (density, red, green, blue raw parameters).
std::string encode_checkpoint(const radiance::VoxelRadianceField& field);
radiance::VoxelRadianceField decode_checkpoint(const std::string& bytes);
void save_checkpoint(const fs::path& path, const radiance::VoxelRadianceField& field);
radiance::VoxelRadianceField load_checkpoint(const fs::path& path);

}  // namespace pheno::io
