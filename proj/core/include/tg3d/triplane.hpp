#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "tg3d/params.hpp"
#include "tg3d/tensor.hpp"

namespace tg3d {

/// Three axis-aligned feature planes (XY, XZ, YZ) spanning the cube [-1, 1]^3.
/// Plane values are stored as [3, C, R, R]; row index follows the second axis
/// of the plane's name (y for XY, z for XZ and YZ), column the first.
struct TriPlane {
  Tensor planes;

  static TriPlane from_tensor(Tensor planes);
  int channels() const { return planes.dim(1); }
  int resolution() const { return planes.dim(2); }
};

/// Decoded field value at one point.
struct PointSample {
  double density = 0.0;
  std::vector<double> feature;
};

/// Sum of the three bilinear plane lookups at `xyz` (clamped to the cube).
std::vector<double> sample_triplane(const TriPlane& tp, const Vec3& xyz);

/// Batched, differentiable lookup: planes [B, 3, C, R, R], points [B, P, 3] -> [B*P, C].
Tensor sample_triplanes(const Tensor& planes, const Tensor& points);

struct DecoderConfig {
  int in_channels = 16;
  int hidden = 32;
  int feature_channels = 8;
};

struct DecodedPoints {
  Tensor density;   // [P]
  Tensor features;  // [P, F]
};

/// Point decoder: one softplus hidden layer, softplus density, linear features.
class TriPlaneDecoder {
 public:
  TriPlaneDecoder() = default;
  TriPlaneDecoder(const DecoderConfig& cfg, Rng& rng);

  DecodedPoints decode(const Tensor& features) const;
  PointSample decode_point(std::span<const double> feature) const;

  const DecoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  DecoderConfig cfg_;
  ParamSet params_;
  size_t w0_ = 0, b0_ = 0, w1_ = 0, b1_ = 0;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
};

/// Evaluates density at a batch of points.
using DensityField = std::function<void(std::span<const Vec3> points, std::span<double> density)>;

/// Iso-surface of `field` at level `iso` sampled on a grid_res^3 lattice over
/// [-1, 1]^3 (marching tetrahedra, shared vertices welded). Inside = density > iso.
TriangleMesh extract_mesh(const DensityField& field, int grid_res, double iso);
TriangleMesh extract_mesh(const TriPlane& tp, const TriPlaneDecoder& decoder, int grid_res, double iso);

/// V - E + F of a welded mesh.
int euler_characteristic(const TriangleMesh& mesh);
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

}  // namespace tg3d
