#pragma once

#include <array>
#include <span>
#include <vector>

#include "tg3d/params.hpp"
#include "tg3d/tensor.hpp"
#include "tg3d/triplane.hpp"

namespace tg3d {

/// Pinhole camera: 4x4 world-to-camera extrinsic and 3x3 intrinsic with focal
/// lengths and principal point normalized by the image size (OpenCV axes:
/// x right, y down, z forward).
struct CameraParams {
  std::array<double, 16> extrinsic{};
  std::array<double, 9> intrinsic{};

  static constexpr int kDim = 25;

  static CameraParams from_vector(std::span<const double> p);
  std::array<double, kDim> to_vector() const;
  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
  Vec3 center() const;
};

/// Camera on a sphere of `radius` around the origin looking at it; yaw about +y,
/// pitch toward +y, yaw = pitch = 0 sits on +z.
CameraParams orbit_camera(double yaw, double pitch, double radius, double focal);

struct RayBundle {
  int res = 0;
  std::vector<double> origins;     // res * res * 3
  std::vector<double> directions;  // res * res * 3, unit length
  double near = 0.0;
  double far = 0.0;
};

RayBundle generate_rays(const CameraParams& cam, int res, double near, double far);

/// Sorted depths in [near, far]: bin midpoints, or one uniform draw per bin.
std::vector<double> sample_along_ray(double near, double far, int n_samples, bool stratified, Rng* rng);

struct CompositeResult {
  std::vector<double> feature;
  double weight_sum = 0.0;
  double depth = 0.0;
};

/// Emission-absorption compositing of one ray. `features` is n x F row-major.
CompositeResult composite(std::span<const double> densities, std::span<const double> features,
                          std::span<const double> deltas, std::span<const double> depths);

/// Differentiable batched compositing. density [N, S], values [N, S, Q];
/// returns [N, Q + 2] = (sum_i w_i v_i + (1 - W) * background, W, depth).
Tensor composite_rays(const Tensor& density, const Tensor& values, std::span<const double> deltas,
                      std::span<const double> depths, std::span<const double> background = {});

/// Reorders [B*H*W, Q] pixel rows into [B, Q, H, W].
Tensor rows_to_image(const Tensor& rows, int batch, int height, int width);

struct RenderOptions {
  int resolution = 16;
  int n_samples = 32;
  double near = 1.7;
  double far = 3.7;
  bool stratified = false;
  Vec3 background{1.0, 1.0, 1.0};
};

struct RenderOutput {
  Tensor feature_image;  // [B, F, H, W]
  Tensor rgb_image;      // [B, 3, H, W]
  Tensor weight_image;   // [B, 1, H, W]
  Tensor depth_image;    // [B, 1, H, W]
};

/// Sample positions for a batch of cameras: points [B, res*res*S, 3] plus per-sample
/// deltas and depths (flattened in the same order).
struct RaySamples {
  Tensor points;
  std::vector<double> deltas;
  std::vector<double> depths;
  std::vector<double> inside;  // 1 inside [-1, 1]^3, else 0
  int batch = 0;
  int res = 0;
  int n_samples = 0;
};

RaySamples make_ray_samples(std::span<const CameraParams> cams, const RenderOptions& opts, Rng* rng);

/// Composites already-decoded samples (density [N*S], features [N*S, F]) into images.
/// RGB is the sigmoid of the first three feature channels over the background.
RenderOutput composite_samples(const RaySamples& samples, const Tensor& density, const Tensor& features,
                               const RenderOptions& opts);

/// planes [B, 3, C, R, R], one camera per batch element.
RenderOutput render_batch(const Tensor& planes, const TriPlaneDecoder& decoder, std::span<const CameraParams> cams,
                          const RenderOptions& opts, Rng* rng = nullptr);

RenderOutput render_image(const TriPlane& tp, const TriPlaneDecoder& decoder, const CameraParams& cam,
                          const RenderOptions& opts, Rng* rng = nullptr);

}  // namespace tg3d
