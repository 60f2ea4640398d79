#include "pheno/geometry.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace pheno::geometry {

namespace {

constexpr std::array<std::array<int, 3>, 8> kCorner{{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};

constexpr std::array<std::array<int, 2>, 12> kEdge{{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

// Corners of each face, counter-clockwise seen from outside the cube.
constexpr std::array<std::array<int, 4>, 6> kFace{{
    {0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5}}};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    if ((kEdge[static_cast<std::size_t>(e)][0] == a && kEdge[static_cast<std::size_t>(e)][1] == b) ||
        (kEdge[static_cast<std::size_t>(e)][0] == b && kEdge[static_cast<std::size_t>(e)][1] == a)) {
      return e;
    }
  }
  return -1;
}

bool share_face(int e1, int e2) {
  for (const auto& f : kFace) {
    int hits = 0;
    for (int k = 0; k < 4; ++k) {
      const int e = edge_between(f[static_cast<std::size_t>(k)], f[static_cast<std::size_t>((k + 1) % 4)]);
      hits += (e == e1) + (e == e2);
    }
    if (hits == 2) return true;
  }
  return false;
}

// Ear clipping that never adds a diagonal inside a cube face: the neighbour
// sharing the face could add the same diagonal and make the edge non-manifold.
bool triangulate_loop(const std::vector<int>& loop, std::vector<std::array<int, 3>>& out) {
  const std::size_t n = loop.size();
  if (n == 3) {
    out.push_back({loop[0], loop[1], loop[2]});
    return true;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    const int a = loop[(i + n - 1) % n], b = loop[i % n], c = loop[(i + 1) % n];
    if (share_face(a, c)) continue;
    std::vector<int> rest;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i % n) rest.push_back(loop[k]);
    }
    std::vector<std::array<int, 3>> tris;
    if (!triangulate_loop(rest, tris)) continue;
    out.push_back({a, b, c});
    out.insert(out.end(), tris.begin(), tris.end());
    return true;
  }
  return false;
}

// Contour segments on each face run from the edge where the counter-clockwise
// walk enters a run of inside corners to the edge where it leaves it. On a
// face with diagonal inside corners this keeps the inside corners apart; the
// neighbouring cube makes the same pairing, so the surface has no cracks.
CaseTable build_case_table() {
  CaseTable table;
  for (int mask = 0; mask < 256; ++mask) {
    auto inside = [mask](int c) { return ((mask >> c) & 1) != 0; };
    std::uint16_t edges = 0;
    for (int e = 0; e < 12; ++e) {
      if (inside(kEdge[static_cast<std::size_t>(e)][0]) != inside(kEdge[static_cast<std::size_t>(e)][1])) {
        edges = static_cast<std::uint16_t>(edges | (1u << e));
      }
    }
    table.edge_mask[static_cast<std::size_t>(mask)] = edges;

    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& f : kFace) {
      for (int k = 0; k < 4; ++k) {
        const int c = f[static_cast<std::size_t>(k)];
        const int prev = f[static_cast<std::size_t>((k + 3) % 4)];
        if (!inside(c) || inside(prev)) continue;
        int j = k;
        while (inside(f[static_cast<std::size_t>((j + 1) % 4)])) j = (j + 1) % 4;
        const int enter = edge_between(prev, c);
        const int leave = edge_between(f[static_cast<std::size_t>(j)], f[static_cast<std::size_t>((j + 1) % 4)]);
        next[static_cast<std::size_t>(enter)] = leave;
      }
    }
    std::array<bool, 12> used{};
    for (int e = 0; e < 12; ++e) {
      if (next[static_cast<std::size_t>(e)] < 0 || used[static_cast<std::size_t>(e)]) continue;
      std::vector<int> loop;
      for (int cur = e; !used[static_cast<std::size_t>(cur)]; cur = next[static_cast<std::size_t>(cur)]) {
        used[static_cast<std::size_t>(cur)] = true;
        loop.push_back(cur);
      }
      if (!triangulate_loop(loop, table.triangles[static_cast<std::size_t>(mask)])) {
        throw std::logic_error("no face-safe triangulation for cube case " + std::to_string(mask));
      }
    }
  }
  return table;
}

}  // namespace

const CaseTable& case_table() {
  static const CaseTable table = build_case_table();
  return table;
}

TriMesh marching_cubes(const DensityVolume& vol, double threshold) {
  const auto& table = case_table();
  const Eigen::Vector3i& n = vol.resolution;
  const Eigen::Index total = static_cast<Eigen::Index>(n.x()) * n.y() * n.z();
  std::vector<int> edge_vertex(static_cast<std::size_t>(3 * total), -1);
  std::vector<Vec3> verts;
  std::vector<Eigen::Vector3i> tris;

  auto vertex_on = [&](int i, int j, int k, int e) {
    const auto& ca = kCorner[static_cast<std::size_t>(kEdge[static_cast<std::size_t>(e)][0])];
    const auto& cb = kCorner[static_cast<std::size_t>(kEdge[static_cast<std::size_t>(e)][1])];
    const Eigen::Vector3i a(i + ca[0], j + ca[1], k + ca[2]);
    const Eigen::Vector3i b(i + cb[0], j + cb[1], k + cb[2]);
    const Eigen::Vector3i lo = a.cwiseMin(b);
    int axis = 0;
    while (a(axis) == b(axis)) ++axis;
    const std::size_t key = static_cast<std::size_t>(3 * vol.index(lo.x(), lo.y(), lo.z()) + axis);
    if (edge_vertex[key] >= 0) return edge_vertex[key];
    const double va = vol.at(a.x(), a.y(), a.z()), vb = vol.at(b.x(), b.y(), b.z());
    const double t = (threshold - va) / (vb - va);
    const Vec3 pa = vol.point(a.x(), a.y(), a.z()), pb = vol.point(b.x(), b.y(), b.z());
    edge_vertex[key] = static_cast<int>(verts.size());
    verts.push_back(pa + t * (pb - pa));
    return edge_vertex[key];
  };

  for (int k = 0; k + 1 < n.z(); ++k) {
    for (int j = 0; j + 1 < n.y(); ++j) {
      for (int i = 0; i + 1 < n.x(); ++i) {
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = kCorner[static_cast<std::size_t>(c)];
          if (vol.at(i + o[0], j + o[1], k + o[2]) >= threshold) mask |= 1 << c;
        }
        for (const auto& tri : table.triangles[static_cast<std::size_t>(mask)]) {
          tris.emplace_back(vertex_on(i, j, k, tri[0]), vertex_on(i, j, k, tri[1]), vertex_on(i, j, k, tri[2]));
        }
      }
    }
  }

  TriMesh mesh;
  mesh.vertices.resize(3, static_cast<Eigen::Index>(verts.size()));
  for (std::size_t v = 0; v < verts.size(); ++v) mesh.vertices.col(static_cast<Eigen::Index>(v)) = verts[v];
  mesh.triangles.resize(3, static_cast<Eigen::Index>(tris.size()));
  for (std::size_t t = 0; t < tris.size(); ++t) mesh.triangles.col(static_cast<Eigen::Index>(t)) = tris[t];
  return clean_mesh(mesh);
}

TriMesh clean_mesh(const TriMesh& mesh, double weld_tol, double area_tol) {
  // Weld through a hash of tolerance-sized cells, checking neighbouring cells.
  std::map<std::tuple<long, long, long>, std::vector<int>> buckets;
  std::vector<int> remap(static_cast<std::size_t>(mesh.vertex_count()));
  std::vector<int> kept;
  auto cell = [weld_tol](double x) { return static_cast<long>(std::floor(x / weld_tol)); };
  for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v) {
    const Vec3 p = mesh.vertices.col(v);
    const long cx = cell(p.x()), cy = cell(p.y()), cz = cell(p.z());
    int found = -1;
    for (long dx = -1; dx <= 1 && found < 0; ++dx) {
      for (long dy = -1; dy <= 1 && found < 0; ++dy) {
        for (long dz = -1; dz <= 1 && found < 0; ++dz) {
          const auto it = buckets.find({cx + dx, cy + dy, cz + dz});
          if (it == buckets.end()) continue;
          for (int u : it->second) {
            if ((mesh.vertices.col(kept[static_cast<std::size_t>(u)]) - p).norm() <= weld_tol) {
              found = u;
              break;
            }
          }
        }
      }
    }
    if (found < 0) {
      found = static_cast<int>(kept.size());
      kept.push_back(static_cast<int>(v));
      buckets[{cx, cy, cz}].push_back(found);
    }
    remap[static_cast<std::size_t>(v)] = found;
  }

  std::vector<Eigen::Vector3i> tris;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const Eigen::Vector3i tri(remap[static_cast<std::size_t>(mesh.triangles(0, t))],
                              remap[static_cast<std::size_t>(mesh.triangles(1, t))],
                              remap[static_cast<std::size_t>(mesh.triangles(2, t))]);
    if (tri(0) == tri(1) || tri(1) == tri(2) || tri(0) == tri(2)) continue;
    const Vec3 a = mesh.vertices.col(kept[static_cast<std::size_t>(tri(0))]);
    const Vec3 b = mesh.vertices.col(kept[static_cast<std::size_t>(tri(1))]);
    const Vec3 c = mesh.vertices.col(kept[static_cast<std::size_t>(tri(2))]);
    if (0.5 * (b - a).cross(c - a).norm() < area_tol) continue;
    tris.push_back(tri);
  }

  std::vector<int> final_index(kept.size(), -1);
  int count = 0;
  for (const auto& tri : tris) {
    for (int a = 0; a < 3; ++a) {
      if (final_index[static_cast<std::size_t>(tri(a))] < 0) final_index[static_cast<std::size_t>(tri(a))] = count++;
    }
  }
  TriMesh out;
  out.vertices.resize(3, count);
  const bool coloured = mesh.colors.cols() == mesh.vertex_count() && mesh.vertex_count() > 0;
  if (coloured) out.colors.resize(3, count);
  for (std::size_t u = 0; u < kept.size(); ++u) {
    const int f = final_index[u];
    if (f < 0) continue;
    out.vertices.col(f) = mesh.vertices.col(kept[u]);
    if (coloured) out.colors.col(f) = mesh.colors.col(kept[u]);
  }
  out.triangles.resize(3, static_cast<Eigen::Index>(tris.size()));
  for (std::size_t t = 0; t < tris.size(); ++t) {
    for (int a = 0; a < 3; ++a) {
      out.triangles(a, static_cast<Eigen::Index>(t)) = final_index[static_cast<std::size_t>(tris[t](a))];
    }
  }
  return out;
}

double default_threshold(const DensityVolume& vol, double fraction, double percentile) {
  if (vol.values.size() == 0) return 0.0;
  std::vector<double> v(vol.values.data(), vol.values.data() + vol.values.size());
  const auto rank = static_cast<std::size_t>(
      std::clamp(std::ceil(percentile * static_cast<double>(v.size())) - 1.0, 0.0, static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank), v.end());
  return fraction * v[rank];
}

Eigen::Matrix3Xd vertex_normals(const TriMesh& mesh) {
  Eigen::Matrix3Xd n = Eigen::Matrix3Xd::Zero(3, mesh.vertex_count());
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const Vec3 a = mesh.vertices.col(mesh.triangles(0, t));
    const Vec3 b = mesh.vertices.col(mesh.triangles(1, t));
    const Vec3 c = mesh.vertices.col(mesh.triangles(2, t));
    const Vec3 area_normal = 0.5 * (b - a).cross(c - a);
    for (int k = 0; k < 3; ++k) n.col(mesh.triangles(k, t)) += area_normal;
  }
  for (Eigen::Index v = 0; v < n.cols(); ++v) {
    const double len = n.col(v).norm();
    if (len > 0) n.col(v) /= len;
  }
  return n;
}

namespace {

std::pair<int, int> undirected(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

}  // namespace

int euler_characteristic(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    for (int k = 0; k < 3; ++k) ++edges[undirected(mesh.triangles(k, t), mesh.triangles((k + 1) % 3, t))];
  }
  return static_cast<int>(mesh.vertex_count()) - static_cast<int>(edges.size()) +
         static_cast<int>(mesh.triangle_count());
}

double enclosed_volume(const TriMesh& mesh) {
  double v = 0.0;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const Vec3 a = mesh.vertices.col(mesh.triangles(0, t));
    const Vec3 b = mesh.vertices.col(mesh.triangles(1, t));
    const Vec3 c = mesh.vertices.col(mesh.triangles(2, t));
    v += a.dot(b.cross(c)) / 6.0;
  }
  return v;
}

int component_count(const TriMesh& mesh) {
  std::vector<int> parent(static_cast<std::size_t>(mesh.vertex_count()));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    for (int k = 1; k < 3; ++k) parent[static_cast<std::size_t>(find(mesh.triangles(k, t)))] = find(mesh.triangles(0, t));
  }
  std::vector<char> used(parent.size(), 0);
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) used[static_cast<std::size_t>(find(mesh.triangles(0, t)))] = 1;
  return static_cast<int>(std::count(used.begin(), used.end(), 1));
}

bool consistently_oriented(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> directed;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    for (int k = 0; k < 3; ++k) {
      if (++directed[{mesh.triangles(k, t), mesh.triangles((k + 1) % 3, t)}] > 1) return false;
    }
  }
  return true;
}

std::string mesh_to_obj(const TriMesh& mesh) {
  std::ostringstream os;
  os.precision(9);
  const bool coloured = mesh.colors.cols() == mesh.vertex_count() && mesh.vertex_count() > 0;
  for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v) {
    os << "v " << mesh.vertices(0, v) << ' ' << mesh.vertices(1, v) << ' ' << mesh.vertices(2, v);
    if (coloured) os << ' ' << mesh.colors(0, v) << ' ' << mesh.colors(1, v) << ' ' << mesh.colors(2, v);
    os << '\n';
  }
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    os << "f " << mesh.triangles(0, t) + 1 << ' ' << mesh.triangles(1, t) + 1 << ' ' << mesh.triangles(2, t) + 1 << '\n';
  }
  return os.str();
}

std::string mesh_to_json(const TriMesh& mesh) {
  nlohmann::json doc;
  doc["vertices"] = nlohmann::json::array();
  for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v) {
    doc["vertices"].push_back({mesh.vertices(0, v), mesh.vertices(1, v), mesh.vertices(2, v)});
  }
  doc["triangles"] = nlohmann::json::array();
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    doc["triangles"].push_back({mesh.triangles(0, t), mesh.triangles(1, t), mesh.triangles(2, t)});
  }
  doc["colors"] = nlohmann::json::array();
  for (Eigen::Index v = 0; v < mesh.colors.cols(); ++v) {
    doc["colors"].push_back({mesh.colors(0, v), mesh.colors(1, v), mesh.colors(2, v)});
  }
  return doc.dump();
}

}  // namespace pheno::geometry
