#pragma once

#include "pheno/core.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace pheno::radiance {

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  Vec3 size() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
  Aabb inflated(double factor) const;  // scaled about the centre
  /// Parametric entry/exit of the ray o + t d, clipped to t >= 0; empty on a miss.
  std::optional<std::pair<double, double>> intersect(const Vec3& origin, const Vec3& direction) const;
};

Aabb merge(const Aabb& a, const Aabb& b);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double near = 0.0;
  double far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
  void validate() const;
};

struct FieldSample {
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
};

template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(20) ? x : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

double inverse_softplus(double y);
double inverse_sigmoid(double y);

/// Eight voxels and weights of a trilinear lookup between voxel centres.
struct Trilinear {
  std::array<Eigen::Index, 8> index{};
  std::array<double, 8> weight{};
  bool inside = false;
};

/// Dense grid of raw density and colour parameters. Density is softplus- and
/// colour sigmoid-activated per voxel, then trilinearly interpolated between
/// voxel centres; positions between the box face and the outermost centres
/// take the edge value, and everything outside the box is empty.
class VoxelRadianceField {
 public:
  VoxelRadianceField() = default;
  VoxelRadianceField(Aabb bounds, Eigen::Vector3i resolution, double init_sigma = 0.01, double init_color = 0.5);

  const Aabb& bounds() const { return bounds_; }
  const Eigen::Vector3i& resolution() const { return resolution_; }
  Eigen::Index voxel_count() const { return raw_density_.size(); }
  Vec3 voxel_size() const;
  Eigen::Index index(int i, int j, int k) const;
  Vec3 voxel_center(int i, int j, int k) const;

  Trilinear locate(const Vec3& x) const;
  FieldSample query(const Vec3& x) const;

  /// Raw parameters. Call commit() after editing them.
  Eigen::VectorXd& raw_density() { return raw_density_; }
  Eigen::Matrix3Xd& raw_color() { return raw_color_; }
  const Eigen::VectorXd& raw_density() const { return raw_density_; }
  const Eigen::Matrix3Xd& raw_color() const { return raw_color_; }
  void commit();

  /// Activated per-voxel values.
  const Eigen::VectorXd& sigma() const { return sigma_; }
  const Eigen::Matrix3Xd& color() const { return color_; }
  const Eigen::VectorXd& dsigma() const { return dsigma_; }
  const Eigen::Matrix3Xd& dcolor() const { return dcolor_; }

  /// Sets raw parameters so that the activated values equal the given ones.
  void set_activated(const Eigen::VectorXd& sigma, const Eigen::Matrix3Xd& color);

 private:
  Aabb bounds_;
  Eigen::Vector3i resolution_ = Eigen::Vector3i::Zero();
  Eigen::VectorXd raw_density_;
  Eigen::Matrix3Xd raw_color_;
  Eigen::VectorXd sigma_;
  Eigen::Matrix3Xd color_;
  Eigen::VectorXd dsigma_;   // d sigma / d raw
  Eigen::Matrix3Xd dcolor_;  // d colour / d raw
};

// ---------------------------------------------------------------------------
// Analytic scenes

/// Ellipsoidal blob with constant core density and a cosine falloff shell of
/// relative half-width `falloff` around the unit level set.
struct Blob {
  Vec3 center = Vec3::Zero();
  Vec3 radii = Vec3::Ones();
  double density = 20.0;
  Vec3 color = Vec3::Ones();
  double falloff = 0.15;

  double sigma(const Vec3& x) const;
  Aabb support() const;
};

struct AnalyticScene {
  std::vector<Blob> blobs;

  bool empty() const { return blobs.empty(); }
  /// Summed density; colour is the density-weighted blob colour.
  FieldSample query(const Vec3& x) const;
  std::optional<Aabb> bounds() const;
};

// ---------------------------------------------------------------------------
// Rendering

struct RaySamples {
  Eigen::VectorXd t;
  Eigen::VectorXd delta;
  Eigen::VectorXd sigma;
  Eigen::Matrix3Xd color;
  Eigen::VectorXd transmittance;  // T_1 .. T_{K+1}
  Eigen::VectorXd weights;        // T_i (1 - exp(-sigma_i delta_i))

  Eigen::Index size() const { return t.size(); }
};

struct Composite {
  Vec3 color = Vec3::Zero();
  Eigen::VectorXd weights;
  Eigen::VectorXd transmittance;  // K + 1 entries
};

/// Volume-rendering quadrature with T_i = exp(-sum_{j<i} sigma_j delta_j).
Composite composite(const Eigen::VectorXd& sigma, const Eigen::VectorXd& delta, const Eigen::Matrix3Xd& color);

/// Stratified depths t_i = near + (i + xi_i) delta with delta = (far - near) / K;
/// xi_i = 1/2 without a generator.
std::pair<Eigen::VectorXd, Eigen::VectorXd> stratified_samples(const Ray& ray, int K, std::mt19937_64* rng = nullptr);

struct RenderedRay {
  Vec3 color = Vec3::Zero();
  RaySamples samples;
};

RenderedRay render_ray(const VoxelRadianceField& field, const Ray& ray, int K, std::mt19937_64* rng = nullptr);
RenderedRay render_ray(const AnalyticScene& scene, const Ray& ray, int K, std::mt19937_64* rng = nullptr);

/// Pinhole camera; R and t map camera coordinates (x right, y down, z forward)
/// to world coordinates.
struct Camera {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
  int width = 1, height = 1;

  void validate() const;
  /// Unit world direction through the centre of pixel (u, v).
  Vec3 direction(int u, int v) const;
  /// Pixel coordinates of a world point (no visibility check).
  Eigen::Vector2d project(const Vec3& x) const;
};

Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double fov_y,
               const Vec3& up = Vec3::UnitZ());

struct Image {
  int width = 0;
  int height = 0;
  Eigen::Matrix3Xd rgb;  // one column per pixel, row-major pixel order

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(w) * h)) {}
  Eigen::Index pixel(int u, int v) const { return static_cast<Eigen::Index>(v) * width + u; }
};

struct PosedImage {
  Image image;
  Camera camera;
};

Image render_image(const VoxelRadianceField& field, const Camera& camera, int K);
/// Ground-truth view of an analytic scene at high quadrature resolution.
PosedImage render_reference(const AnalyticScene& scene, const Camera& camera, int K = 256);

double mse(const Image& pred, const Image& gt);
/// 10 log10(1 / MSE) per element; +inf for identical images.
double psnr(const Image& pred, const Image& gt);

// ---------------------------------------------------------------------------
// Losses

/// Mean over rays of the per-ray squared colour error (summed over channels).
double rendering_loss(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt);

struct OcclusionConfig {
  double weight = 1.0;
  double prefix_frac = 0.15;

  /// Prefix mask: the first round(prefix_frac * K) samples are penalized.
  Eigen::VectorXd mask(int K) const;
};

/// Mean over rays of (1/K) sum sigma_k m_k.
double occlusion_loss(const std::vector<Eigen::VectorXd>& sigmas, const Eigen::VectorXd& mask);

struct RayBatch {
  std::vector<Ray> rays;     // rays missing the field contribute black
  std::vector<bool> hits;
  Eigen::Matrix3Xd target;  // column per ray
};

/// All pixel rays of the images, clipped to the box.
RayBatch rays_from_images(const std::vector<PosedImage>& images, const Aabb& bounds);

struct Gradient {
  Eigen::VectorXd density;
  Eigen::Matrix3Xd color;
};

struct LossTerms {
  double color = 0.0;
  double occ = 0.0;
  double total = 0.0;  // color + weight * occ
};

/// L_color + w L_occ over a subset of the batch, with the exact gradient with
/// respect to the raw parameters accumulated into `grad` when given.
LossTerms evaluate_loss(const VoxelRadianceField& field, const RayBatch& batch, const std::vector<std::size_t>& subset,
                        int K, const OcclusionConfig& occ, Gradient* grad = nullptr, std::mt19937_64* rng = nullptr);
LossTerms evaluate_loss(const VoxelRadianceField& field, const RayBatch& batch, int K, const OcclusionConfig& occ,
                        Gradient* grad = nullptr);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 40;
  int batch_rays = 2048;
  int samples = 64;
  double lr_density = 4.0;  // per ray: applied to the batch-summed gradient
  double lr_color = 1.0;
  double momentum = 0.9;
  OcclusionConfig occ;
  std::uint64_t seed = 1;
  bool jitter = true;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double l_color = 0.0;
  double l_occ = 0.0;
  double psnr = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;  // entry 0 is the untrained field
};

TrainResult train(VoxelRadianceField& field, const std::vector<PosedImage>& images, const TrainConfig& cfg);

/// Mean density over the penalized prefix samples of every hitting pixel ray.
double prefix_mean_density(const VoxelRadianceField& field, const std::vector<Camera>& cameras, int K,
                           double prefix_frac);

std::string metrics_to_csv(const TrainResult& result);

}  // namespace pheno::radiance
