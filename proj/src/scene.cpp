#include "pheno/scene.hpp"

#include <json.hpp>

#include <random>

namespace pheno::scene {

using nlohmann::json;

TerrainKind terrain_kind_from_string(const std::string& s) {
  if (s == "flat") return TerrainKind::kFlat;
  if (s == "ramp") return TerrainKind::kRamp;
  if (s == "curb") return TerrainKind::kCurb;
  if (s == "noise") return TerrainKind::kNoise;
  throw PreconditionError("unknown terrain kind '" + s + "'");
}

std::string to_string(TerrainKind k) {
  switch (k) {
    case TerrainKind::kFlat: return "flat";
    case TerrainKind::kRamp: return "ramp";
    case TerrainKind::kCurb: return "curb";
    case TerrainKind::kNoise: return "noise";
  }
  return "flat";
}

void FarmSpec::validate() const {
  const auto& l = layout;
  if (l.rows < 0 || l.plants_per_row < 0) throw PreconditionError("row and plant counts must be non-negative");
  if (!(l.half_extents.array() > 0).all()) throw PreconditionError("plant half extents must be positive");
  if (!(l.plant_height > 0)) throw PreconditionError("plant height must be positive");
  if (l.jitter < 0 || l.min_gap < 0) throw PreconditionError("jitter and gap must be non-negative");
  if (!(terrain.point_spacing > 0)) throw PreconditionError("point spacing must be positive");
  if (terrain.margin < 0) throw PreconditionError("terrain margin must be non-negative");
}

FarmSpec farm_spec_from_json(const std::string& text) {
  FarmSpec s;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("invalid farm spec: ") + e.what());
  }
  s.name = j.value("name", s.name);
  s.seed = j.value("seed", s.seed);
  if (j.contains("terrain")) {
    const auto& t = j["terrain"];
    s.terrain.kind = terrain_kind_from_string(t.value("kind", std::string("flat")));
    s.terrain.ramp_angle = t.value("ramp_angle", s.terrain.ramp_angle);
    s.terrain.curb_height = t.value("curb_height", s.terrain.curb_height);
    s.terrain.curb_offset = t.value("curb_offset", s.terrain.curb_offset);
    s.terrain.noise_amplitude = t.value("noise_amplitude", s.terrain.noise_amplitude);
    s.terrain.noise_wavelength = t.value("noise_wavelength", s.terrain.noise_wavelength);
    s.terrain.point_spacing = t.value("point_spacing", s.terrain.point_spacing);
    s.terrain.margin = t.value("margin", s.terrain.margin);
  }
  if (j.contains("layout")) {
    const auto& l = j["layout"];
    s.layout.rows = l.value("rows", s.layout.rows);
    s.layout.plants_per_row = l.value("plants_per_row", s.layout.plants_per_row);
    s.layout.row_spacing = l.value("row_spacing", s.layout.row_spacing);
    s.layout.plant_spacing = l.value("plant_spacing", s.layout.plant_spacing);
    s.layout.yaw = l.value("yaw", s.layout.yaw);
    if (l.contains("half_extents")) s.layout.half_extents = Vec2(l["half_extents"][0], l["half_extents"][1]);
    s.layout.plant_height = l.value("plant_height", s.layout.plant_height);
    s.layout.jitter = l.value("jitter", s.layout.jitter);
    s.layout.min_gap = l.value("min_gap", s.layout.min_gap);
    s.layout.max_retries = l.value("max_retries", s.layout.max_retries);
  }
  s.validate();
  return s;
}

namespace {

json spec_json(const FarmSpec& s) {
  return {{"name", s.name},
          {"seed", s.seed},
          {"terrain",
           {{"kind", to_string(s.terrain.kind)},
            {"ramp_angle", s.terrain.ramp_angle},
            {"curb_height", s.terrain.curb_height},
            {"curb_offset", s.terrain.curb_offset},
            {"noise_amplitude", s.terrain.noise_amplitude},
            {"noise_wavelength", s.terrain.noise_wavelength},
            {"point_spacing", s.terrain.point_spacing},
            {"margin", s.terrain.margin}}},
          {"layout",
           {{"rows", s.layout.rows},
            {"plants_per_row", s.layout.plants_per_row},
            {"row_spacing", s.layout.row_spacing},
            {"plant_spacing", s.layout.plant_spacing},
            {"yaw", s.layout.yaw},
            {"half_extents", {s.layout.half_extents.x(), s.layout.half_extents.y()}},
            {"plant_height", s.layout.plant_height},
            {"jitter", s.layout.jitter},
            {"min_gap", s.layout.min_gap},
            {"max_retries", s.layout.max_retries}}}};
}

}  // namespace

std::string farm_spec_to_json(const FarmSpec& spec) { return spec_json(spec).dump(2); }

const radiance::AnalyticScene& FarmScene::plant(int instance_id) const {
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].id == instance_id) return plants[i];
  }
  throw PreconditionError("no plant for instance " + std::to_string(instance_id));
}

double FarmScene::ground_under(int instance_id) const {
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].id == instance_id) return ground[i];
  }
  throw PreconditionError("no plant for instance " + std::to_string(instance_id));
}

double terrain_height(const TerrainSpec& t, const Vec2& p, double curb_y, std::uint64_t seed) {
  switch (t.kind) {
    case TerrainKind::kFlat: return 0.0;
    case TerrainKind::kRamp: return std::tan(t.ramp_angle) * p.x();
    case TerrainKind::kCurb: return p.y() >= curb_y ? t.curb_height : 0.0;
    case TerrainKind::kNoise: {
      std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
      const double a = phase(rng), b = phase(rng);
      const double k = 2.0 * kPi / t.noise_wavelength;
      return t.noise_amplitude * std::sin(k * p.x() + a) * std::cos(k * p.y() + b);
    }
  }
  return 0.0;
}

radiance::AnalyticScene plant_model(const farm_map::Instance& inst, double ground, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = inst.half_extents.minCoeff();
  const double rz = 0.35 * inst.height;
  const double canopy_z = ground + inst.height - rz;
  radiance::AnalyticScene s;
  radiance::Blob canopy;
  canopy.center = Vec3(inst.center.x(), inst.center.y(), canopy_z);
  canopy.radii = Vec3(r, r, rz);
  canopy.density = 30.0;
  canopy.color = Vec3(0.15 + 0.15 * unit(rng), 0.5 + 0.3 * unit(rng), 0.1 + 0.15 * unit(rng));
  s.blobs.push_back(canopy);
  const double half = 0.5 * (canopy_z - ground);
  if (half > 0) {
    radiance::Blob trunk;
    trunk.center = Vec3(inst.center.x(), inst.center.y(), ground + half);
    trunk.radii = Vec3(0.06, 0.06, half);
    trunk.density = 30.0;
    trunk.color = Vec3(0.45, 0.3, 0.15);
    s.blobs.push_back(trunk);
  }
  return s;
}

namespace {

bool footprints_overlap(const farm_map::Instance& a, const farm_map::Instance& b, double gap) {
  // Separating-axis test on the two oriented boxes grown by half the gap.
  const auto ca = a.corners(0.5 * gap), cb = b.corners(0.5 * gap);
  for (const double yaw : {a.yaw, b.yaw}) {
    for (const Vec2& axis : {unit_from_angle(yaw), unit_from_angle(yaw + 0.5 * kPi)}) {
      double amin = kInf, amax = -kInf, bmin = kInf, bmax = -kInf;
      for (const auto& p : ca) {
        amin = std::min(amin, axis.dot(p));
        amax = std::max(amax, axis.dot(p));
      }
      for (const auto& p : cb) {
        bmin = std::min(bmin, axis.dot(p));
        bmax = std::max(bmax, axis.dot(p));
      }
      if (amax <= bmin || bmax <= amin) return false;
    }
  }
  return true;
}

}  // namespace

FarmScene genfarm(const FarmSpec& spec) {
  spec.validate();
  const auto& l = spec.layout;
  FarmScene scene;
  scene.spec = spec;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> jit(-1.0, 1.0);
  const Eigen::Matrix2d rot = rotation2(l.yaw);

  bool placed = false;
  for (int attempt = 0; attempt <= l.max_retries && !placed; ++attempt) {
    scene.instances.clear();
    for (int r = 0; r < l.rows; ++r) {
      for (int k = 0; k < l.plants_per_row; ++k) {
        farm_map::Instance inst;
        inst.id = r * l.plants_per_row + k + 1;
        const Vec2 local(k * l.plant_spacing + l.jitter * jit(rng), r * l.row_spacing + l.jitter * jit(rng));
        inst.center = rot * local;
        inst.half_extents = l.half_extents;
        inst.yaw = wrap_angle(l.yaw);
        inst.height = l.plant_height;
        scene.instances.push_back(inst);
      }
    }
    placed = true;
    for (std::size_t i = 0; i < scene.instances.size() && placed; ++i) {
      for (std::size_t j = i + 1; j < scene.instances.size() && placed; ++j) {
        if (footprints_overlap(scene.instances[i], scene.instances[j], l.min_gap)) placed = false;
      }
    }
  }
  if (!placed) {
    throw PreconditionError("plants overlap after " + std::to_string(l.max_retries) +
                            " retries; increase the spacing or reduce the jitter");
  }

  Vec2 lo = Vec2::Zero(), hi = Vec2::Zero();
  if (!scene.instances.empty()) {
    lo = Vec2::Constant(kInf);
    hi = Vec2::Constant(-kInf);
    for (const auto& inst : scene.instances) {
      for (const auto& c : inst.corners()) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
      }
    }
  }
  const double curb_y = hi.y() + spec.terrain.curb_offset;
  auto height_at = [&](const Vec2& p) { return terrain_height(spec.terrain, p, curb_y, spec.seed); };

  for (const auto& inst : scene.instances) {
    const double g = height_at(inst.center);
    scene.ground.push_back(g);
    scene.plants.push_back(plant_model(inst, g, spec.seed * 1000003ull + static_cast<std::uint64_t>(inst.id)));
  }

  // Ground lattice, skipping points hidden under a canopy.
  const double s = spec.terrain.point_spacing;
  lo.array() -= spec.terrain.margin;
  hi.array() += spec.terrain.margin;
  const int nx = static_cast<int>(std::floor((hi.x() - lo.x()) / s)) + 1;
  const int ny = static_cast<int>(std::floor((hi.y() - lo.y()) / s)) + 1;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const Vec2 p = lo + Vec2(ix * s, iy * s);
      bool hidden = false;
      for (const auto& inst : scene.instances) {
        const Vec2 q = rotation2(-inst.yaw) * (p - inst.center);
        const double r = inst.half_extents.minCoeff();
        if (q.squaredNorm() < r * r) {
          hidden = true;
          break;
        }
      }
      if (!hidden) scene.cloud.points.emplace_back(p.x(), p.y(), height_at(p));
    }
  }

  // Canopy and trunk surface points.
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    for (const auto& b : scene.plants[i].blobs) {
      const double rmax = b.radii.maxCoeff();
      const int n_lat = std::max(4, static_cast<int>(std::ceil(kPi * rmax / s)));
      const int n_lon = std::max(8, static_cast<int>(std::ceil(2.0 * kPi * b.radii.head<2>().maxCoeff() / s)));
      for (int a = 0; a <= n_lat; ++a) {
        const double theta = kPi * a / n_lat;
        for (int o = 0; o < n_lon; ++o) {
          const double phi = 2.0 * kPi * o / n_lon;
          const Vec3 u(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
          scene.cloud.points.push_back(b.center + b.radii.cwiseProduct(u));
        }
      }
    }
  }
  return scene;
}

std::string scene_to_json(const FarmScene& scene) {
  json plants = json::array();
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    json blobs = json::array();
    for (const auto& b : scene.plants[i].blobs) {
      blobs.push_back({{"center", {b.center.x(), b.center.y(), b.center.z()}},
                       {"radii", {b.radii.x(), b.radii.y(), b.radii.z()}},
                       {"density", b.density},
                       {"color", {b.color.x(), b.color.y(), b.color.z()}},
                       {"falloff", b.falloff}});
    }
    plants.push_back({{"id", scene.instances[i].id}, {"ground", scene.ground[i]}, {"blobs", blobs}});
  }
  const json doc = {{"spec", spec_json(scene.spec)},
                    {"instances", json::parse(farm_map::detections_to_json(scene.instances))},
                    {"plants", plants}};
  return doc.dump(2);
}

FarmScene scene_from_json(const std::string& text) {
  FarmScene scene;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("invalid scene file: ") + e.what());
  }
  scene.spec = farm_spec_from_json(doc.at("spec").dump());
  scene.instances = farm_map::parse_detections(doc.at("instances").dump());
  for (const auto& inst : scene.instances) {
    const json* entry = nullptr;
    for (const auto& p : doc.at("plants")) {
      if (p.at("id").get<int>() == inst.id) entry = &p;
    }
    if (!entry) throw Error("scene file lacks a plant model for instance " + std::to_string(inst.id));
    radiance::AnalyticScene model;
    for (const auto& b : entry->at("blobs")) {
      radiance::Blob blob;
      blob.center = Vec3(b["center"][0], b["center"][1], b["center"][2]);
      blob.radii = Vec3(b["radii"][0], b["radii"][1], b["radii"][2]);
      blob.density = b.at("density").get<double>();
      blob.color = Vec3(b["color"][0], b["color"][1], b["color"][2]);
      blob.falloff = b.at("falloff").get<double>();
      model.blobs.push_back(blob);
    }
    scene.plants.push_back(model);
    scene.ground.push_back(entry->at("ground").get<double>());
  }
  return scene;
}

}  // namespace pheno::scene
