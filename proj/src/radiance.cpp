#include "pheno/radiance.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <numeric>
#include <sstream>

namespace pheno::radiance {

Aabb Aabb::inflated(double factor) const {
  const Vec3 c = center(), h = 0.5 * factor * size();
  return {c - h, c + h};
}

std::optional<std::pair<double, double>> Aabb::intersect(const Vec3& origin, const Vec3& direction) const {
  double t0 = 0.0, t1 = kInf;
  for (int a = 0; a < 3; ++a) {
    if (direction(a) == 0.0) {
      if (origin(a) < min(a) || origin(a) > max(a)) return std::nullopt;
      continue;
    }
    double ta = (min(a) - origin(a)) / direction(a);
    double tb = (max(a) - origin(a)) / direction(a);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return std::nullopt;
  return std::make_pair(t0, t1);
}

Aabb merge(const Aabb& a, const Aabb& b) { return {a.min.cwiseMin(b.min), a.max.cwiseMax(b.max)}; }

void Ray::validate() const {
  if (std::abs(direction.norm() - 1.0) > 1e-9) throw PreconditionError("ray direction must be unit length");
  if (!(near < far)) throw PreconditionError("ray requires near < far");
}

double inverse_softplus(double y) {
  if (!(y > 0)) throw PreconditionError("softplus output must be positive");
  return y > 20 ? y : std::log(std::expm1(y));
}

double inverse_sigmoid(double y) {
  y = std::clamp(y, 1e-9, 1.0 - 1e-9);
  return std::log(y / (1.0 - y));
}

// ---------------------------------------------------------------------------
// Voxel field

VoxelRadianceField::VoxelRadianceField(Aabb bounds, Eigen::Vector3i resolution, double init_sigma, double init_color)
    : bounds_(bounds), resolution_(resolution) {
  if ((resolution.array() < 1).any()) throw PreconditionError("field resolution must be positive");
  if (!((bounds.size().array() > 0).all())) throw PreconditionError("field bounds must have positive size");
  const Eigen::Index n = static_cast<Eigen::Index>(resolution.x()) * resolution.y() * resolution.z();
  raw_density_ = Eigen::VectorXd::Constant(n, inverse_softplus(init_sigma));
  raw_color_ = Eigen::Matrix3Xd::Constant(3, n, inverse_sigmoid(init_color));
  commit();
}

Vec3 VoxelRadianceField::voxel_size() const { return bounds_.size().cwiseQuotient(resolution_.cast<double>()); }

Eigen::Index VoxelRadianceField::index(int i, int j, int k) const {
  return (static_cast<Eigen::Index>(k) * resolution_.y() + j) * resolution_.x() + i;
}

Vec3 VoxelRadianceField::voxel_center(int i, int j, int k) const {
  return bounds_.min + (Vec3(i, j, k).array() + 0.5).matrix().cwiseProduct(voxel_size());
}

Trilinear VoxelRadianceField::locate(const Vec3& x) const {
  Trilinear t;
  if (!bounds_.contains(x)) return t;
  t.inside = true;
  std::array<int, 3> lo{}, hi{};
  std::array<double, 3> f{};
  for (int a = 0; a < 3; ++a) {
    const int n = resolution_(a);
    const double g = std::clamp((x(a) - bounds_.min(a)) / bounds_.size()(a) * n - 0.5, 0.0, static_cast<double>(n - 1));
    lo[a] = std::min(static_cast<int>(g), std::max(n - 2, 0));
    hi[a] = std::min(lo[a] + 1, n - 1);
    f[a] = g - lo[a];
  }
  for (int c = 0; c < 8; ++c) {
    const int i = (c & 1) ? hi[0] : lo[0];
    const int j = (c & 2) ? hi[1] : lo[1];
    const int k = (c & 4) ? hi[2] : lo[2];
    t.index[static_cast<std::size_t>(c)] = index(i, j, k);
    t.weight[static_cast<std::size_t>(c)] =
        ((c & 1) ? f[0] : 1 - f[0]) * ((c & 2) ? f[1] : 1 - f[1]) * ((c & 4) ? f[2] : 1 - f[2]);
  }
  return t;
}

FieldSample VoxelRadianceField::query(const Vec3& x) const {
  const Trilinear t = locate(x);
  FieldSample s;
  if (!t.inside) return s;
  for (std::size_t c = 0; c < 8; ++c) {
    s.sigma += t.weight[c] * sigma_(t.index[c]);
    s.color += t.weight[c] * color_.col(t.index[c]);
  }
  return s;
}

void VoxelRadianceField::commit() {
  sigma_ = raw_density_.unaryExpr([](double v) { return softplus(v); });
  dsigma_ = raw_density_.unaryExpr([](double v) { return sigmoid(v); });
  color_ = raw_color_.unaryExpr([](double v) { return sigmoid(v); });
  dcolor_ = color_.array() * (1.0 - color_.array());
}

void VoxelRadianceField::set_activated(const Eigen::VectorXd& sigma, const Eigen::Matrix3Xd& color) {
  if (sigma.size() != voxel_count() || color.cols() != voxel_count()) {
    throw PreconditionError("activated values must cover every voxel");
  }
  raw_density_ = sigma.unaryExpr([](double v) { return inverse_softplus(v); });
  raw_color_ = color.unaryExpr([](double v) { return inverse_sigmoid(v); });
  commit();
}

// ---------------------------------------------------------------------------
// Analytic scenes

double Blob::sigma(const Vec3& x) const {
  const double r = (x - center).cwiseQuotient(radii).norm();
  if (r <= 1.0 - falloff) return density;
  if (r >= 1.0 + falloff) return 0.0;
  return density * 0.5 * (1.0 + std::cos(kPi * (r - (1.0 - falloff)) / (2.0 * falloff)));
}

Aabb Blob::support() const { return {center - (1.0 + falloff) * radii, center + (1.0 + falloff) * radii}; }

FieldSample AnalyticScene::query(const Vec3& x) const {
  FieldSample s;
  for (const auto& b : blobs) {
    const double d = b.sigma(x);
    s.sigma += d;
    s.color += d * b.color;
  }
  if (s.sigma > 0) s.color /= s.sigma;
  return s;
}

std::optional<Aabb> AnalyticScene::bounds() const {
  if (blobs.empty()) return std::nullopt;
  Aabb box = blobs.front().support();
  for (const auto& b : blobs) box = merge(box, b.support());
  return box;
}

// ---------------------------------------------------------------------------
// Rendering

Composite composite(const Eigen::VectorXd& sigma, const Eigen::VectorXd& delta, const Eigen::Matrix3Xd& color) {
  const Eigen::Index K = sigma.size();
  Composite out;
  out.weights.resize(K);
  out.transmittance.resize(K + 1);
  out.transmittance(0) = 1.0;
  for (Eigen::Index i = 0; i < K; ++i) {
    const double tau = sigma(i) * delta(i);
    out.weights(i) = out.transmittance(i) * -std::expm1(-tau);
    out.transmittance(i + 1) = out.transmittance(i) * std::exp(-tau);
    out.color += out.weights(i) * color.col(i);
  }
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> stratified_samples(const Ray& ray, int K, std::mt19937_64* rng) {
  if (K < 1) throw PreconditionError("at least one sample per ray required");
  const double delta = (ray.far - ray.near) / K;
  Eigen::VectorXd t(K);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < K; ++i) t(i) = ray.near + (i + (rng ? unit(*rng) : 0.5)) * delta;
  return {t, Eigen::VectorXd::Constant(K, delta)};
}

namespace {

template <typename Field>
RenderedRay march(const Field& field, const Ray& ray, int K, std::mt19937_64* rng) {
  RenderedRay out;
  auto [t, delta] = stratified_samples(ray, K, rng);
  RaySamples& s = out.samples;
  s.t = std::move(t);
  s.delta = std::move(delta);
  s.sigma.resize(K);
  s.color.resize(3, K);
  for (int i = 0; i < K; ++i) {
    const FieldSample f = field.query(ray.at(s.t(i)));
    s.sigma(i) = f.sigma;
    s.color.col(i) = f.color;
  }
  Composite c = composite(s.sigma, s.delta, s.color);
  s.weights = std::move(c.weights);
  s.transmittance = std::move(c.transmittance);
  out.color = c.color;
  return out;
}

template <typename Field>
Image render_with(const Field& field, const Aabb& box, const Camera& camera, int K) {
  camera.validate();
  Image img(camera.width, camera.height);
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      Ray ray;
      ray.origin = camera.t;
      ray.direction = camera.direction(u, v);
      const auto hit = box.intersect(ray.origin, ray.direction);
      if (!hit) continue;
      ray.near = hit->first;
      ray.far = hit->second;
      img.rgb.col(img.pixel(u, v)) = march(field, ray, K, nullptr).color;
    }
  }
  return img;
}

}  // namespace

RenderedRay render_ray(const VoxelRadianceField& field, const Ray& ray, int K, std::mt19937_64* rng) {
  return march(field, ray, K, rng);
}

RenderedRay render_ray(const AnalyticScene& scene, const Ray& ray, int K, std::mt19937_64* rng) {
  return march(scene, ray, K, rng);
}

void Camera::validate() const {
  if (!(fx > 0 && fy > 0)) throw PreconditionError("focal lengths must be positive");
  if (width < 1 || height < 1) throw PreconditionError("image size must be positive");
  if (!(R.transpose() * R).isApprox(Mat3::Identity(), 1e-9) || R.determinant() < 0) {
    throw PreconditionError("camera rotation must be orthonormal");
  }
}

Vec3 Camera::direction(int u, int v) const {
  const Vec3 d((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0);
  return (R * d).normalized();
}

Eigen::Vector2d Camera::project(const Vec3& x) const {
  const Vec3 c = R.transpose() * (x - t);
  return {fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy};
}

Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double fov_y, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(Vec3::UnitY());
  x.normalize();
  const Vec3 y = z.cross(x);
  Camera cam;
  cam.R.col(0) = x;
  cam.R.col(1) = y;
  cam.R.col(2) = z;
  cam.t = eye;
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * fov_y);
  cam.fx = cam.fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  return cam;
}

Image render_image(const VoxelRadianceField& field, const Camera& camera, int K) {
  return render_with(field, field.bounds(), camera, K);
}

PosedImage render_reference(const AnalyticScene& scene, const Camera& camera, int K) {
  PosedImage out;
  out.camera = camera;
  const auto box = scene.bounds();
  out.image = box ? render_with(scene, *box, camera, K) : Image(camera.width, camera.height);
  return out;
}

double mse(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height) throw PreconditionError("image dimensions differ");
  if (pred.rgb.size() == 0) return 0.0;
  return (pred.rgb - gt.rgb).squaredNorm() / static_cast<double>(pred.rgb.size());
}

double psnr(const Image& pred, const Image& gt) {
  const double m = mse(pred, gt);
  return m == 0.0 ? kInf : 10.0 * std::log10(1.0 / m);
}

// ---------------------------------------------------------------------------
// Losses

double rendering_loss(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  if (pred.cols() != gt.cols()) throw PreconditionError("prediction and target batches differ in length");
  if (pred.cols() == 0) return 0.0;
  return (pred - gt).squaredNorm() / static_cast<double>(pred.cols());
}

Eigen::VectorXd OcclusionConfig::mask(int K) const {
  const int n = std::clamp(static_cast<int>(std::lround(prefix_frac * K)), 0, K);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(K);
  m.head(n).setOnes();
  return m;
}

double occlusion_loss(const std::vector<Eigen::VectorXd>& sigmas, const Eigen::VectorXd& mask) {
  if (sigmas.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : sigmas) {
    if (s.size() != mask.size()) throw PreconditionError("mask length must equal the sample count");
    sum += s.dot(mask) / static_cast<double>(s.size());
  }
  return sum / static_cast<double>(sigmas.size());
}

RayBatch rays_from_images(const std::vector<PosedImage>& images, const Aabb& bounds) {
  RayBatch batch;
  std::size_t total = 0;
  for (const auto& im : images) total += static_cast<std::size_t>(im.image.rgb.cols());
  batch.rays.reserve(total);
  batch.hits.reserve(total);
  batch.target.resize(3, static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (const auto& im : images) {
    im.camera.validate();
    if (im.image.width != im.camera.width || im.image.height != im.camera.height) {
      throw PreconditionError("image size does not match its camera");
    }
    for (int v = 0; v < im.image.height; ++v) {
      for (int u = 0; u < im.image.width; ++u) {
        Ray r;
        r.origin = im.camera.t;
        r.direction = im.camera.direction(u, v);
        const auto hit = bounds.intersect(r.origin, r.direction);
        if (hit) {
          r.near = hit->first;
          r.far = hit->second;
        }
        batch.rays.push_back(r);
        batch.hits.push_back(hit.has_value());
        batch.target.col(col++) = im.image.rgb.col(im.image.pixel(u, v));
      }
    }
  }
  return batch;
}

LossTerms evaluate_loss(const VoxelRadianceField& field, const RayBatch& batch, const std::vector<std::size_t>& subset,
                        int K, const OcclusionConfig& occ, Gradient* grad, std::mt19937_64* rng) {
  LossTerms out;
  if (subset.empty()) return out;
  if (grad) {
    if (grad->density.size() != field.voxel_count()) grad->density = Eigen::VectorXd::Zero(field.voxel_count());
    if (grad->color.cols() != field.voxel_count()) grad->color = Eigen::Matrix3Xd::Zero(3, field.voxel_count());
  }
  const Eigen::VectorXd mask = occ.mask(K);
  const double inv_n = 1.0 / static_cast<double>(subset.size());
  const auto& sig = field.sigma();
  const auto& col = field.color();

  std::vector<Trilinear> cells(static_cast<std::size_t>(K));
  Eigen::VectorXd sigma(K), delta(K);
  Eigen::Matrix3Xd color(3, K);
  for (std::size_t r : subset) {
    const Vec3 target = batch.target.col(static_cast<Eigen::Index>(r));
    if (!batch.hits[r]) {
      out.color += target.squaredNorm() * inv_n;
      continue;
    }
    const Ray& ray = batch.rays[r];
    auto [t, d] = stratified_samples(ray, K, rng);
    delta = d;
    for (int i = 0; i < K; ++i) {
      Trilinear& tl = cells[static_cast<std::size_t>(i)];
      tl = field.locate(ray.at(t(i)));
      double s = 0.0;
      Vec3 c = Vec3::Zero();
      if (tl.inside) {
        for (std::size_t v = 0; v < 8; ++v) {
          s += tl.weight[v] * sig(tl.index[v]);
          c += tl.weight[v] * col.col(tl.index[v]);
        }
      }
      sigma(i) = s;
      color.col(i) = c;
    }
    const Composite comp = composite(sigma, delta, color);
    const Vec3 err = comp.color - target;
    out.color += err.squaredNorm() * inv_n;
    out.occ += sigma.dot(mask) / K * inv_n;
    if (!grad) continue;

    // dL/dC for this ray, then back through the quadrature.
    const Vec3 g = 2.0 * err * inv_n;
    double suffix = 0.0;  // sum_{i>k} w_i (g . c_i)
    for (int k = K - 1; k >= 0; --k) {
      const double gc = g.dot(color.col(k));
      double dsig = delta(k) * (comp.transmittance(k + 1) * gc - suffix);
      dsig += occ.weight * mask(k) / K * inv_n;
      suffix += comp.weights(k) * gc;
      const Vec3 dcol = comp.weights(k) * g;
      const Trilinear& tl = cells[static_cast<std::size_t>(k)];
      if (!tl.inside) continue;
      for (std::size_t v = 0; v < 8; ++v) {
        const Eigen::Index idx = tl.index[v];
        grad->density(idx) += tl.weight[v] * dsig * field.dsigma()(idx);
        grad->color.col(idx) += tl.weight[v] * dcol.cwiseProduct(field.dcolor().col(idx));
      }
    }
  }
  out.total = out.color + occ.weight * out.occ;
  return out;
}

LossTerms evaluate_loss(const VoxelRadianceField& field, const RayBatch& batch, int K, const OcclusionConfig& occ,
                        Gradient* grad) {
  std::vector<std::size_t> all(batch.rays.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return evaluate_loss(field, batch, all, K, occ, grad, nullptr);
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (epochs < 0) throw PreconditionError("epochs must be non-negative");
  if (batch_rays < 1) throw PreconditionError("batch size must be positive");
  if (samples < 1) throw PreconditionError("samples per ray must be positive");
  if (!(lr_density >= 0 && lr_color >= 0)) throw PreconditionError("step sizes must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw PreconditionError("momentum must lie in [0, 1)");
  if (!(occ.weight >= 0)) throw PreconditionError("occlusion weight must be non-negative");
  if (!(occ.prefix_frac >= 0 && occ.prefix_frac <= 1)) throw PreconditionError("prefix fraction must lie in [0, 1]");
}

namespace {

double psnr_from_loss(double l_color) { return l_color > 0 ? 10.0 * std::log10(3.0 / l_color) : kInf; }

}  // namespace

TrainResult train(VoxelRadianceField& field, const std::vector<PosedImage>& images, const TrainConfig& cfg) {
  cfg.validate();
  if (images.size() < 2) throw PreconditionError("training needs at least two images");
  const RayBatch batch = rays_from_images(images, field.bounds());
  std::mt19937_64 rng(cfg.seed);

  TrainResult result;
  {
    const LossTerms l0 = evaluate_loss(field, batch, cfg.samples, cfg.occ);
    result.metrics.push_back({0, l0.color, l0.occ, psnr_from_loss(l0.color)});
  }
  std::vector<std::size_t> order(batch.rays.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Gradient grad;
  Eigen::VectorXd vel_d = Eigen::VectorXd::Zero(field.voxel_count());
  Eigen::Matrix3Xd vel_c = Eigen::Matrix3Xd::Zero(3, field.voxel_count());
  std::vector<std::size_t> subset;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_color = 0.0, sum_occ = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_rays)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_rays));
      subset.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      grad.density.setZero(field.voxel_count());
      grad.color.setZero(3, field.voxel_count());
      const LossTerms l = evaluate_loss(field, batch, subset, cfg.samples, cfg.occ, &grad, cfg.jitter ? &rng : nullptr);
      if (!std::isfinite(l.total)) throw DivergedError("training loss is not finite", epoch);
      const double share = static_cast<double>(subset.size()) / static_cast<double>(order.size());
      sum_color += l.color * share;
      sum_occ += l.occ * share;
      // Step sizes apply to the batch-summed gradient.
      const double n = static_cast<double>(subset.size());
      vel_d = cfg.momentum * vel_d - (cfg.lr_density * n) * grad.density;
      vel_c = cfg.momentum * vel_c - (cfg.lr_color * n) * grad.color;
      field.raw_density() += vel_d;
      field.raw_color() += vel_c;
      field.commit();
    }
    if (!std::isfinite(sum_color) || !field.raw_density().allFinite()) {
      throw DivergedError("training loss is not finite", epoch);
    }
    result.metrics.push_back({epoch, sum_color, sum_occ, psnr_from_loss(sum_color)});
  }
  return result;
}

double prefix_mean_density(const VoxelRadianceField& field, const std::vector<Camera>& cameras, int K,
                           double prefix_frac) {
  OcclusionConfig occ;
  occ.prefix_frac = prefix_frac;
  const Eigen::VectorXd mask = occ.mask(K);
  const double n_prefix = mask.sum();
  if (n_prefix == 0) return 0.0;
  double sum = 0.0;
  std::size_t rays = 0;
  for (const auto& cam : cameras) {
    for (int v = 0; v < cam.height; ++v) {
      for (int u = 0; u < cam.width; ++u) {
        Ray r;
        r.origin = cam.t;
        r.direction = cam.direction(u, v);
        const auto hit = field.bounds().intersect(r.origin, r.direction);
        if (!hit) continue;
        r.near = hit->first;
        r.far = hit->second;
        const RenderedRay rr = render_ray(field, r, K);
        sum += rr.samples.sigma.dot(mask) / n_prefix;
        ++rays;
      }
    }
  }
  return rays ? sum / static_cast<double>(rays) : 0.0;
}

std::string metrics_to_csv(const TrainResult& result) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,L_color,L_occ,PSNR\n";
  for (const auto& m : result.metrics) os << m.epoch << ',' << m.l_color << ',' << m.l_occ << ',' << m.psnr << '\n';
  return os.str();
}

}  // namespace pheno::radiance
