#include "pheno/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pheno::io {

using nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Point clouds

terrain::TerrainCloud parse_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError("unexpected end of PLY file", lineno);
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next_line();
  if (line != "ply") throw ParseError("missing 'ply' magic", lineno);
  long count = -1;
  std::vector<std::string> props;
  bool in_vertex = false;
  while (true) {
    next_line();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw ParseError("only ASCII PLY is supported", lineno);
    } else if (word == "element") {
      std::string name;
      long n = 0;
      ls >> name >> n;
      in_vertex = name == "vertex";
      if (in_vertex) count = n;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (word == "end_header") {
      break;
    }
  }
  if (count < 0) throw ParseError("PLY has no vertex element", lineno);
  std::array<int, 3> col{-1, -1, -1};
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (props[i] == "x") col[0] = static_cast<int>(i);
    if (props[i] == "y") col[1] = static_cast<int>(i);
    if (props[i] == "z") col[2] = static_cast<int>(i);
  }
  if (col[0] < 0 || col[1] < 0 || col[2] < 0) throw ParseError("PLY vertex needs x, y and z", lineno);
  terrain::TerrainCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(count));
  std::vector<double> vals(props.size());
  for (long i = 0; i < count; ++i) {
    next_line();
    std::istringstream ls(line);
    for (auto& v : vals) {
      if (!(ls >> v)) throw ParseError("malformed PLY vertex", lineno);
    }
    cloud.points.emplace_back(vals[static_cast<std::size_t>(col[0])], vals[static_cast<std::size_t>(col[1])],
                              vals[static_cast<std::size_t>(col[2])]);
  }
  return cloud;
}

terrain::TerrainCloud parse_xyz(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  terrain::TerrainCloud cloud;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z)) throw ParseError("expected three coordinates", lineno);
    cloud.points.emplace_back(x, y, z);
  }
  return cloud;
}

terrain::TerrainCloud load_cloud(const fs::path& path) {
  const std::string text = read_text(path);
  return path.extension() == ".ply" ? parse_ply(text) : parse_xyz(text);
}

std::string cloud_to_ply(const terrain::TerrainCloud& cloud) {
  std::ostringstream os;
  os.precision(17);
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.points.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const auto& p : cloud.points) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  return os.str();
}

namespace {

std::string number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

std::string grid_to_csv(const terrain::TraversabilityGrid& grid, const terrain::CostFieldConfig& cfg) {
  const json header = {{"origin", {grid.origin().x(), grid.origin().y()}},
                       {"cell_size", grid.cell_size()},
                       {"width", grid.width()},
                       {"height", grid.height()},
                       {"alpha_s", cfg.alpha_s},
                       {"alpha_lambda", cfg.alpha_lambda},
                       {"s_crit", cfg.s_crit},
                       {"lambda_crit", cfg.lambda_crit},
                       {"body_clearance", cfg.body_clearance},
                       {"slope_window", cfg.slope_window}};
  std::ostringstream os;
  os << "# " << header.dump() << '\n';
  os << "ix,iy,x,y,collision,slope,step,ground,upsilon,points\n";
  for (int iy = 0; iy < grid.height(); ++iy) {
    for (int ix = 0; ix < grid.width(); ++ix) {
      const auto& c = grid.at(ix, iy);
      const Vec2 p = grid.cell_center(ix, iy);
      os << ix << ',' << iy << ',' << number(p.x()) << ',' << number(p.y()) << ',' << number(c.collision) << ','
         << number(c.slope) << ',' << number(c.step) << ',' << number(c.ground) << ',' << number(c.upsilon) << ','
         << c.point_count << '\n';
    }
  }
  return os.str();
}

std::string obstacles_to_json(const terrain::ObstacleField& field) {
  json polys = json::array();
  for (const auto& p : field.polygons) {
    json verts = json::array();
    for (const auto& v : p.vertices) verts.push_back({v.x(), v.y()});
    polys.push_back(verts);
  }
  return polys.dump();
}

// ---------------------------------------------------------------------------
// Images

std::string encode_ppm(const radiance::Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(image.rgb.size()));
  for (Eigen::Index p = 0; p < image.rgb.cols(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(image.rgb(c, p), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

radiance::Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw Error("truncated PPM header");
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw Error("not a binary PPM (P6) image");
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw Error("unsupported PPM dimensions or depth");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() < pos + n) throw Error("truncated PPM raster");
  radiance::Image img(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    img.rgb(static_cast<Eigen::Index>(i % 3), static_cast<Eigen::Index>(i / 3)) =
        static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
  }
  return img;
}

void write_ppm(const fs::path& path, const radiance::Image& image) { write_text(path, encode_ppm(image)); }

radiance::Image read_ppm(const fs::path& path) { return decode_ppm(read_text(path)); }

namespace {

json camera_json(const radiance::Camera& cam) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.push_back(cam.R(i, j));
  }
  return {{"R", r},
          {"t", {cam.t.x(), cam.t.y(), cam.t.z()}},
          {"fx", cam.fx},
          {"fy", cam.fy},
          {"cx", cam.cx},
          {"cy", cam.cy},
          {"width", cam.width},
          {"height", cam.height}};
}

radiance::Camera camera_parse(const json& j) {
  radiance::Camera cam;
  const auto& r = j.at("R");
  if (r.size() != 9) throw Error("camera R must have 9 entries");
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) cam.R(i, k) = r.at(static_cast<std::size_t>(3 * i + k)).get<double>();
  }
  const auto& t = j.at("t");
  cam.t = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.validate();
  return cam;
}

}  // namespace

std::string camera_to_json(const radiance::Camera& cam) { return camera_json(cam).dump(); }

radiance::Camera camera_from_json(const std::string& text) { return camera_parse(json::parse(text)); }

std::string poses_to_json(const std::vector<PoseRecord>& poses) {
  json arr = json::array();
  for (const auto& p : poses) {
    json j = camera_json(p.camera);
    j["file"] = p.file;
    arr.push_back(j);
  }
  return arr.dump(2);
}

std::vector<PoseRecord> poses_from_json(const std::string& text) {
  std::vector<PoseRecord> out;
  try {
    for (const auto& j : json::parse(text)) out.push_back({j.value("file", std::string()), camera_parse(j)});
  } catch (const json::exception& e) {
    throw Error(std::string("invalid poses file: ") + e.what());
  }
  return out;
}

std::vector<radiance::PosedImage> load_posed_images(const fs::path& poses_json) {
  std::vector<radiance::PosedImage> out;
  for (const auto& rec : poses_from_json(read_text(poses_json))) {
    out.push_back({read_ppm(poses_json.parent_path() / rec.file), rec.camera});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'P', 'H', 'N', 'F', 'L', 'D', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

double get_f32(const std::string& in, std::size_t pos) { return std::bit_cast<float>(get_u32(in, pos)); }

}  // namespace

std::string encode_checkpoint(const radiance::VoxelRadianceField& field) {
  const auto& b = field.bounds();
  const json header = {{"bounds", {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}}},
                       {"resolution", {field.resolution().x(), field.resolution().y(), field.resolution().z()}},
                       {"planes", {"density_raw", "red_raw", "green_raw", "blue_raw"}},
                       {"dtype", "float32le"},
                       {"activation", {{"density", "softplus"}, {"color", "sigmoid"}}}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out.reserve(out.size() + 16 * static_cast<std::size_t>(field.voxel_count()));
  for (Eigen::Index i = 0; i < field.voxel_count(); ++i) put_f32(out, field.raw_density()(i));
  for (int c = 0; c < 3; ++c) {
    for (Eigen::Index i = 0; i < field.voxel_count(); ++i) put_f32(out, field.raw_color()(c, i));
  }
  return out;
}

radiance::VoxelRadianceField decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a field checkpoint");
  }
  const std::size_t hlen = get_u32(bytes, sizeof(kMagic));
  std::size_t pos = sizeof(kMagic) + 4;
  if (bytes.size() < pos + hlen) throw Error("truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, hlen));
  } catch (const json::exception& e) {
    throw Error(std::string("invalid checkpoint header: ") + e.what());
  }
  pos += hlen;
  const auto& mn = header.at("bounds").at("min");
  const auto& mx = header.at("bounds").at("max");
  const auto& res = header.at("resolution");
  radiance::Aabb box{Vec3(mn[0], mn[1], mn[2]), Vec3(mx[0], mx[1], mx[2])};
  radiance::VoxelRadianceField field(box, Eigen::Vector3i(res[0].get<int>(), res[1].get<int>(), res[2].get<int>()));
  const auto n = static_cast<std::size_t>(field.voxel_count());
  if (bytes.size() != pos + 16 * n) throw Error("checkpoint size does not match its header");
  for (std::size_t i = 0; i < n; ++i) field.raw_density()(static_cast<Eigen::Index>(i)) = get_f32(bytes, pos + 4 * i);
  pos += 4 * n;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) field.raw_color()(c, static_cast<Eigen::Index>(i)) = get_f32(bytes, pos + 4 * i);
    pos += 4 * n;
  }
  field.commit();
  return field;
}

void save_checkpoint(const fs::path& path, const radiance::VoxelRadianceField& field) {
  write_text(path, encode_checkpoint(field));
}

radiance::VoxelRadianceField load_checkpoint(const fs::path& path) { return decode_checkpoint(read_text(path)); }

}  // namespace pheno::io
