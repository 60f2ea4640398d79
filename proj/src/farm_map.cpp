#include "pheno/farm_map.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace pheno::farm_map {

using nlohmann::json;

void Instance::validate() const {
  if (!(half_extents.x() > 0 && half_extents.y() > 0)) throw PreconditionError("half_extents must be positive");
  if (!(yaw >= -kPi && yaw < kPi)) throw PreconditionError("yaw must lie in [-pi, pi)");
  if (!(height >= 0)) throw PreconditionError("height must be non-negative");
  if (!center.allFinite()) throw PreconditionError("center must be finite");
}

std::array<Vec2, 4> Instance::corners(double inflation) const {
  const Eigen::Matrix2d r = rotation2(yaw);
  const Vec2 h = half_extents.array() + inflation;
  return {center + r * Vec2(-h.x(), -h.y()), center + r * Vec2(h.x(), -h.y()), center + r * Vec2(h.x(), h.y()),
          center + r * Vec2(-h.x(), h.y())};
}

bool Instance::strictly_contains(const Vec2& p, double inflation) const {
  const Vec2 local = rotation2(-yaw) * (p - center);
  const Vec2 h = half_extents.array() + inflation;
  return std::abs(local.x()) < h.x() && std::abs(local.y()) < h.y();
}

const Instance& GraphMap::instance(int id) const {
  for (const auto& inst : instances) {
    if (inst.id == id) return inst;
  }
  throw PreconditionError("unknown instance " + std::to_string(id));
}

std::vector<std::vector<std::pair<int, double>>> GraphMap::adjacency() const {
  std::vector<std::vector<std::pair<int, double>>> adj(nodes.size());
  for (const auto& e : edges) {
    adj[static_cast<std::size_t>(e.a)].emplace_back(e.b, e.length);
    adj[static_cast<std::size_t>(e.b)].emplace_back(e.a, e.length);
  }
  return adj;
}

std::vector<int> GraphMap::nodes_of(int instance_id) const {
  std::vector<int> out;
  for (const auto& n : nodes) {
    if (n.instance_id == instance_id) out.push_back(n.id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detections I/O

namespace {

// Line number of each top-level array element's opening brace.
std::vector<int> element_lines(const std::string& text) {
  std::vector<int> lines;
  int line = 1, depth = 0;
  bool in_string = false, escape = false;
  for (char ch : text) {
    if (ch == '\n') ++line;
    if (in_string) {
      if (escape) escape = false;
      else if (ch == '\\') escape = true;
      else if (ch == '"') in_string = false;
      continue;
    }
    if (ch == '"') in_string = true;
    else if (ch == '[' || ch == '{') {
      if (ch == '{' && depth == 1) lines.push_back(line);
      ++depth;
    } else if (ch == ']' || ch == '}') {
      --depth;
    }
  }
  return lines;
}

int line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

Vec2 vec2_field(const json& obj, const char* key) {
  const auto& v = obj.at(key);
  if (!v.is_array() || v.size() != 2) throw std::invalid_argument(std::string(key) + " must be [x, y]");
  return {v.at(0).get<double>(), v.at(1).get<double>()};
}

}  // namespace

std::vector<Instance> parse_detections(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  if (!doc.is_array()) throw ParseError("detections must be a JSON array", 1);
  const auto lines = element_lines(text);
  std::vector<Instance> out;
  std::set<int> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const int line = i < lines.size() ? lines[i] : 1;
    Instance inst;
    try {
      const auto& rec = doc[i];
      if (!rec.is_object()) throw std::invalid_argument("record must be an object");
      inst.id = rec.at("id").get<int>();
      inst.center = vec2_field(rec, "center");
      inst.half_extents = vec2_field(rec, "half_extents");
      inst.yaw = rec.at("yaw").get<double>();
      inst.height = rec.at("height").get<double>();
      inst.validate();
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line);
    }
    if (!seen.insert(inst.id).second) {
      throw ParseError("duplicate instance id " + std::to_string(inst.id), line);
    }
    out.push_back(inst);
  }
  return out;
}

std::vector<Instance> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open detections file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_detections(ss.str());
}

std::string detections_to_json(const std::vector<Instance>& instances) {
  json arr = json::array();
  for (const auto& inst : instances) {
    arr.push_back({{"id", inst.id},
                   {"center", {inst.center.x(), inst.center.y()}},
                   {"half_extents", {inst.half_extents.x(), inst.half_extents.y()}},
                   {"yaw", inst.yaw},
                   {"height", inst.height}});
  }
  return arr.dump(2);
}

// ---------------------------------------------------------------------------
// Nodes

std::vector<PlanningNode> generate_nodes(const Instance& inst, double clearance, std::optional<Vec2> axis,
                                         int first_id) {
  if (!(clearance >= 0)) throw PreconditionError("clearance must be non-negative");
  const Vec2 dir = axis ? axis->normalized() : unit_from_angle(inst.yaw);
  const double heading0 = wrap_angle(std::atan2(dir.y(), dir.x()));
  const double heading1 = wrap_angle(heading0 + kPi);
  const auto corners = inst.corners(node_inflation(clearance));
  std::vector<PlanningNode> nodes;
  nodes.reserve(8);
  for (int c = 0; c < 4; ++c) {
    for (int d = 0; d < 2; ++d) {
      PlanningNode n;
      n.id = first_id + static_cast<int>(nodes.size());
      n.instance_id = inst.id;
      n.position = corners[static_cast<std::size_t>(c)];
      n.heading = d == 0 ? heading0 : heading1;
      n.corner_index = c;
      n.direction_index = d;
      nodes.push_back(n);
    }
  }
  return nodes;
}

// ---------------------------------------------------------------------------
// Rows

namespace {

Vec2 canonical(Vec2 v) {
  v.normalize();
  if (v.x() < -1e-12 || (std::abs(v.x()) <= 1e-12 && v.y() < 0)) v = -v;
  return v;
}

struct Bucketing {
  std::vector<std::vector<std::size_t>> groups;  // indices into instances
  double residual = 0.0;
};

Bucketing bucket_by_offset(const std::vector<Instance>& inst, const Vec2& axis, double tol) {
  const Vec2 normal(-axis.y(), axis.x());
  std::vector<std::size_t> order(inst.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> off(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) off[i] = inst[i].center.dot(normal);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return off[a] != off[b] ? off[a] < off[b] : inst[a].id < inst[b].id;
  });
  Bucketing out;
  double start = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    if (out.groups.empty() || off[i] - start > tol) {
      out.groups.emplace_back();
      start = off[i];
    }
    out.groups.back().push_back(i);
  }
  for (const auto& g : out.groups) {
    double mean = 0.0;
    for (auto i : g) mean += off[i];
    mean /= static_cast<double>(g.size());
    for (auto i : g) out.residual += (off[i] - mean) * (off[i] - mean);
  }
  return out;
}

std::optional<Vec2> pooled_axis(const std::vector<Instance>& inst, const Bucketing& b) {
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  bool any = false;
  for (const auto& g : b.groups) {
    if (g.size() < 2) continue;
    any = true;
    Vec2 mean = Vec2::Zero();
    for (auto i : g) mean += inst[i].center;
    mean /= static_cast<double>(g.size());
    for (auto i : g) {
      const Vec2 d = inst[i].center - mean;
      cov += d * d.transpose();
    }
  }
  if (!any || cov.norm() == 0.0) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  return canonical(es.eigenvectors().col(1));
}

}  // namespace

std::vector<RowGroup> detect_rows(const std::vector<Instance>& instances, const RowConfig& cfg) {
  if (instances.empty()) throw PreconditionError("detect_rows needs at least one instance");
  std::vector<Vec2> candidates;
  auto add_candidate = [&](const Vec2& v) {
    if (!(v.norm() > 0)) return;
    const Vec2 c = canonical(v);
    for (const auto& e : candidates) {
      if ((e - c).norm() < 1e-9) return;
    }
    candidates.push_back(c);
  };

  if (instances.size() >= 2) {
    Vec2 mean = Vec2::Zero();
    for (const auto& i : instances) mean += i.center;
    mean /= static_cast<double>(instances.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& i : instances) cov += (i.center - mean) * (i.center - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    add_candidate(es.eigenvectors().col(1));
    for (std::size_t i = 0; i < instances.size(); ++i) {
      double best = kInf;
      Vec2 dir = Vec2::Zero();
      for (std::size_t j = 0; j < instances.size(); ++j) {
        if (i == j) continue;
        const double d = (instances[j].center - instances[i].center).norm();
        if (d < best) {
          best = d;
          dir = instances[j].center - instances[i].center;
        }
      }
      add_candidate(dir);
    }
  }
  add_candidate(cfg.default_axis);

  Vec2 best_axis = candidates.front();
  Bucketing best;
  bool have_best = false;
  for (const auto& cand : candidates) {
    Vec2 axis = cand;
    Bucketing b = bucket_by_offset(instances, axis, cfg.lateral_tolerance);
    for (int it = 0; it < cfg.max_refinements; ++it) {
      const auto refit = pooled_axis(instances, b);
      if (!refit || (*refit - axis).norm() < 1e-12) break;
      Bucketing nb = bucket_by_offset(instances, *refit, cfg.lateral_tolerance);
      if (nb.groups.size() > b.groups.size()) break;
      axis = *refit;
      b = std::move(nb);
    }
    const bool better = !have_best || b.groups.size() < best.groups.size() ||
                        (b.groups.size() == best.groups.size() && b.residual < best.residual - 1e-12);
    if (better) {
      best = std::move(b);
      best_axis = axis;
      have_best = true;
    }
  }
  if (instances.size() == 1) best_axis = cfg.default_axis.normalized();

  const double inflation = node_inflation(cfg.clearance);
  std::vector<RowGroup> groups;
  for (const auto& g : best.groups) {
    RowGroup row;
    row.id = static_cast<int>(groups.size());
    row.axis_direction = best_axis;
    std::vector<std::size_t> members = g;
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      const double pa = instances[a].center.dot(best_axis), pb = instances[b].center.dot(best_axis);
      return pa != pb ? pa < pb : instances[a].id < instances[b].id;
    });
    Vec2 centroid = Vec2::Zero();
    double lo = kInf, hi = -kInf;
    for (auto i : members) {
      row.instance_ids.push_back(instances[i].id);
      centroid += instances[i].center;
      for (const auto& c : instances[i].corners(inflation)) {
        lo = std::min(lo, c.dot(best_axis));
        hi = std::max(hi, c.dot(best_axis));
      }
    }
    centroid /= static_cast<double>(members.size());
    row.line_point = centroid;
    const double heading = wrap_angle(std::atan2(best_axis.y(), best_axis.x()));
    const double base = centroid.dot(best_axis);
    row.left_access.id = -1;
    row.left_access.position = centroid + best_axis * (lo - cfg.row_margin - base);
    row.left_access.heading = heading;
    row.right_access.id = -1;
    row.right_access.position = centroid + best_axis * (hi + cfg.row_margin - base);
    row.right_access.heading = heading;
    groups.push_back(std::move(row));
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Graph

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
};

}  // namespace

GraphMap build_graph(const std::vector<Instance>& instances, const std::vector<RowGroup>& groups,
                     const terrain::TraversabilityGrid& terrain, const GraphConfig& cfg) {
  GraphMap g;
  g.instances = instances;
  std::map<int, const Instance*> by_id;
  for (const auto& inst : instances) by_id[inst.id] = &inst;

  std::set<int> assigned;
  for (const auto& row : groups) {
    for (int id : row.instance_ids) {
      if (!by_id.count(id)) throw PreconditionError("group references unknown instance " + std::to_string(id));
      if (!assigned.insert(id).second) throw PreconditionError("groups must partition the instances");
    }
  }
  if (assigned.size() != instances.size()) throw PreconditionError("groups must partition the instances");

  for (const auto& row : groups) {
    for (int id : row.instance_ids) {
      auto nodes = generate_nodes(*by_id[id], cfg.rows.clearance, row.axis_direction, static_cast<int>(g.nodes.size()));
      g.nodes.insert(g.nodes.end(), nodes.begin(), nodes.end());
    }
  }
  g.groups = groups;
  for (auto& row : g.groups) {
    row.left_access.id = static_cast<int>(g.nodes.size());
    row.left_access.instance_id.reset();
    g.nodes.push_back(row.left_access);
    row.right_access.id = static_cast<int>(g.nodes.size());
    row.right_access.instance_id.reset();
    g.nodes.push_back(row.right_access);
  }

  std::set<std::pair<int, int>> seen;
  auto add_edge = [&](int a, int b) {
    if (a == b) return;
    const auto key = std::minmax(a, b);
    if (!seen.insert(key).second) return;
    g.edges.push_back({key.first, key.second, (g.node(a).position - g.node(b).position).norm()});
  };

  for (const auto& row : g.groups) {
    const Vec2 normal(-row.axis_direction.y(), row.axis_direction.x());
    std::set<int> members(row.instance_ids.begin(), row.instance_ids.end());
    for (int dir = 0; dir < 2; ++dir) {
      for (int side = 0; side < 2; ++side) {
        std::vector<int> chain;
        for (const auto& n : g.nodes) {
          if (!n.instance_id || !members.count(*n.instance_id) || n.direction_index != dir) continue;
          const bool positive = (n.position - row.line_point).dot(normal) > 0;
          if (positive == (side == 1)) chain.push_back(n.id);
        }
        std::sort(chain.begin(), chain.end(), [&](int a, int b) {
          const double pa = g.node(a).position.dot(row.axis_direction);
          const double pb = g.node(b).position.dot(row.axis_direction);
          return pa != pb ? pa < pb : a < b;
        });
        for (std::size_t k = 1; k < chain.size(); ++k) add_edge(chain[k - 1], chain[k]);
        if (!chain.empty()) {
          add_edge(row.left_access.id, chain.front());
          add_edge(row.right_access.id, chain.back());
        }
      }
    }
  }

  // Links between rows run through access nodes and are gated by terrain.
  std::vector<int> access;
  for (const auto& row : g.groups) {
    access.push_back(row.left_access.id);
    access.push_back(row.right_access.id);
  }
  for (std::size_t i = 0; i < access.size(); ++i) {
    for (std::size_t j = i + 1; j < access.size(); ++j) {
      if (i / 2 == j / 2) continue;
      const Vec2& a = g.node(access[i]).position;
      const Vec2& b = g.node(access[j]).position;
      if (cfg.gate.passes(terrain, a, b)) add_edge(access[i], access[j]);
    }
  }

  UnionFind uf(g.nodes.size());
  for (const auto& e : g.edges) uf.unite(e.a, e.b);
  std::map<int, std::vector<int>> comps;
  for (const auto& n : g.nodes) comps[uf.find(n.id)].push_back(n.id);
  for (auto& [root, ids] : comps) g.components.push_back(std::move(ids));
  return g;
}

std::string graph_to_json(const GraphMap& g) {
  json nodes = json::array(), edges = json::array(), groups = json::array(), comps = json::array();
  auto opt = [](const std::optional<int>& v) { return v ? json(*v) : json(nullptr); };
  for (const auto& n : g.nodes) {
    nodes.push_back({{"id", n.id},
                     {"instance_id", opt(n.instance_id)},
                     {"x", n.position.x()},
                     {"y", n.position.y()},
                     {"heading", n.heading},
                     {"corner_index", opt(n.corner_index)},
                     {"direction_index", opt(n.direction_index)}});
  }
  for (const auto& e : g.edges) edges.push_back({{"a", e.a}, {"b", e.b}, {"length", e.length}});
  for (const auto& r : g.groups) {
    groups.push_back({{"id", r.id},
                      {"instance_ids", r.instance_ids},
                      {"left_access", r.left_access.id},
                      {"right_access", r.right_access.id},
                      {"axis_direction", {r.axis_direction.x(), r.axis_direction.y()}}});
  }
  for (const auto& c : g.components) comps.push_back(c);
  json doc = {{"nodes", nodes}, {"edges", edges}, {"groups", groups}, {"components", comps}};
  return doc.dump(2);
}

}  // namespace pheno::farm_map
