#pragma once

#include "pheno/core.hpp"
#include "pheno/radiance.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pheno::geometry {

using radiance::Aabb;

/// Density samples at the cell centres of a regular lattice over the ROI:
/// p_ijk = min + (ijk + 1/2) * spacing.
struct DensityVolume {
  Aabb roi;
  Eigen::Vector3i resolution = Eigen::Vector3i::Zero();
  Eigen::VectorXd values;  // x fastest, then y, then z

  Vec3 spacing() const { return roi.size().cwiseQuotient(resolution.cast<double>()); }
  Eigen::Index index(int i, int j, int k) const {
    return (static_cast<Eigen::Index>(k) * resolution.y() + j) * resolution.x() + i;
  }
  double at(int i, int j, int k) const { return values(index(i, j, k)); }
  Vec3 point(int i, int j, int k) const {
    return roi.min + (Vec3(i, j, k).array() + 0.5).matrix().cwiseProduct(spacing());
  }
};

template <typename Field>
DensityVolume sample_volume(const Field& field, const Aabb& roi, const Eigen::Vector3i& resolution) {
  if ((resolution.array() < 2).any()) throw PreconditionError("volume resolution must be at least 2 per axis");
  DensityVolume vol;
  vol.roi = roi;
  vol.resolution = resolution;
  vol.values.resize(static_cast<Eigen::Index>(resolution.x()) * resolution.y() * resolution.z());
  for (int k = 0; k < resolution.z(); ++k) {
    for (int j = 0; j < resolution.y(); ++j) {
      for (int i = 0; i < resolution.x(); ++i) vol.values(vol.index(i, j, k)) = field.query(vol.point(i, j, k)).sigma;
    }
  }
  return vol;
}

struct TriMesh {
  Eigen::Matrix3Xd vertices;
  Eigen::Matrix3Xi triangles;
  Eigen::Matrix3Xd colors;  // empty until coloured

  Eigen::Index vertex_count() const { return vertices.cols(); }
  Eigen::Index triangle_count() const { return triangles.cols(); }
  bool empty() const { return triangles.cols() == 0; }
};

/// Triangle list of every cube configuration, as lattice-edge indices. Edges
/// and corners follow the usual numbering (corners 0-3 on the bottom face
/// counter-clockwise from the origin, 4-7 above them).
struct CaseTable {
  std::array<std::uint16_t, 256> edge_mask{};
  std::array<std::vector<std::array<int, 3>>, 256> triangles;
};

const CaseTable& case_table();

/// Iso-surface at `threshold` with vertices interpolated along lattice edges.
/// Lattice points with value >= threshold are inside; triangles face the
/// lower-density side.
TriMesh marching_cubes(const DensityVolume& vol, double threshold);

/// Merges vertices closer than `weld_tol`, drops triangles with area below
/// `area_tol` or repeated indices, and removes unreferenced vertices.
TriMesh clean_mesh(const TriMesh& mesh, double weld_tol = 1e-9, double area_tol = 1e-12);

/// Half of the given percentile (nearest rank) of the volume's values.
double default_threshold(const DensityVolume& vol, double fraction = 0.5, double percentile = 0.99);

/// Area-weighted vertex normals.
Eigen::Matrix3Xd vertex_normals(const TriMesh& mesh);

/// Vertex colour from the field's colour at the vertex, clamped to [0, 1].
template <typename Field>
TriMesh colour_vertices(TriMesh mesh, const Field& field) {
  mesh.colors.resize(3, mesh.vertex_count());
  for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v) {
    mesh.colors.col(v) = field.query(mesh.vertices.col(v)).color.cwiseMax(0.0).cwiseMin(1.0);
  }
  return mesh;
}

int euler_characteristic(const TriMesh& mesh);
/// Signed enclosed volume (positive for outward-facing closed meshes).
double enclosed_volume(const TriMesh& mesh);
/// Number of vertex-connected triangle components.
int component_count(const TriMesh& mesh);
/// Every interior edge is traversed in opposite directions by its two triangles.
bool consistently_oriented(const TriMesh& mesh);

std::string mesh_to_obj(const TriMesh& mesh);
std::string mesh_to_json(const TriMesh& mesh);

}  // namespace pheno::geometry
