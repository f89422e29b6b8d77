#include "tg3d/renderer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tg3d {

using detail::input_grad;
using detail::input_value;
using detail::make_result;
using detail::wants_grad;

namespace {
constexpr double kDepthEps = 1e-10;

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Forward pass of one ray; fills per-sample weights when requested.
void composite_ray(const double* sigma, const double* delta, const double* depth, int n, const double* values, int q,
                   const double* background, double* out, double* weights) {
  double optical = 0.0;  // sum_{j<i} sigma_j delta_j
  double wsum = 0.0, dsum = 0.0;
  std::fill(out, out + q, 0.0);
  for (int i = 0; i < n; ++i) {
    const double t = std::exp(-optical);
    const double alpha = -std::expm1(-sigma[i] * delta[i]);
    const double w = t * alpha;
    if (weights) weights[i] = w;
    for (int k = 0; k < q; ++k) out[k] += w * values[static_cast<int64_t>(i) * q + k];
    wsum += w;
    dsum += w * depth[i];
    optical += sigma[i] * delta[i];
  }
  if (background)
    for (int k = 0; k < q; ++k) out[k] += (1.0 - wsum) * background[k];
  out[q] = wsum;
  out[q + 1] = dsum / std::max(wsum, kDepthEps);
}
}  // namespace

// ---------------------------------------------------------------- cameras

CameraParams CameraParams::from_vector(std::span<const double> p) {
  if (p.size() != kDim) {
    throw std::invalid_argument(fmt::format("camera vector must have {} entries, got {}", kDim, p.size()));
  }
  CameraParams cam;
  std::copy_n(p.begin(), 16, cam.extrinsic.begin());
  std::copy_n(p.begin() + 16, 9, cam.intrinsic.begin());
  return cam;
}

std::array<double, CameraParams::kDim> CameraParams::to_vector() const {
  std::array<double, kDim> v{};
  std::copy(extrinsic.begin(), extrinsic.end(), v.begin());
  std::copy(intrinsic.begin(), intrinsic.end(), v.begin() + 16);
  return v;
}

void CameraParams::validate() const {
  for (double v : extrinsic)
    if (!std::isfinite(v)) throw std::invalid_argument("camera: non-finite extrinsic");
  for (double v : intrinsic)
    if (!std::isfinite(v)) throw std::invalid_argument("camera: non-finite intrinsic");
  if (extrinsic[12] != 0.0 || extrinsic[13] != 0.0 || extrinsic[14] != 0.0 || extrinsic[15] != 1.0) {
    throw std::invalid_argument("camera: extrinsic bottom row must be (0, 0, 0, 1)");
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += extrinsic[static_cast<size_t>(i * 4 + k)] * extrinsic[static_cast<size_t>(j * 4 + k)];
      if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-5) {
        throw std::invalid_argument("camera: extrinsic rotation is singular or not orthonormal");
      }
    }
  if (intrinsic[0] <= 0.0 || intrinsic[4] <= 0.0) throw std::invalid_argument("camera: focal lengths must be positive");
}

Vec3 CameraParams::center() const {
  // c = -R^T t
  Vec3 c{0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) c[static_cast<size_t>(i)] -= extrinsic[static_cast<size_t>(k * 4 + i)] * extrinsic[static_cast<size_t>(k * 4 + 3)];
  return c;
}

CameraParams orbit_camera(double yaw, double pitch, double radius, double focal) {
  const Vec3 eye{radius * std::sin(yaw) * std::cos(pitch), radius * std::sin(pitch),
                 radius * std::cos(yaw) * std::cos(pitch)};
  const Vec3 forward = normalized({-eye[0], -eye[1], -eye[2]});
  const Vec3 up{0.0, 1.0, 0.0};
  const double uf = dot(up, forward);
  const Vec3 down = normalized({-(up[0] - uf * forward[0]), -(up[1] - uf * forward[1]), -(up[2] - uf * forward[2])});
  const Vec3 right = cross(down, forward);
  CameraParams cam;
  const Vec3 rows[3] = {right, down, forward};
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) cam.extrinsic[static_cast<size_t>(i * 4 + k)] = rows[i][static_cast<size_t>(k)];
    cam.extrinsic[static_cast<size_t>(i * 4 + 3)] = -dot(rows[i], eye);
  }
  cam.extrinsic[15] = 1.0;
  cam.intrinsic = {focal, 0.0, 0.5, 0.0, focal, 0.5, 0.0, 0.0, 1.0};
  return cam;
}

RayBundle generate_rays(const CameraParams& cam, int res, double near, double far) {
  if (res < 1) throw std::invalid_argument("generate_rays: res must be >= 1");
  if (!(near > 0.0) || !(near < far)) throw std::invalid_argument("generate_rays: need 0 < near < far");
  cam.validate();
  RayBundle rays;
  rays.res = res;
  rays.near = near;
  rays.far = far;
  rays.origins.resize(static_cast<size_t>(res) * res * 3);
  rays.directions.resize(rays.origins.size());
  const Vec3 origin = cam.center();
  const double fx = cam.intrinsic[0], fy = cam.intrinsic[4], cx = cam.intrinsic[2], cy = cam.intrinsic[5];
  const auto& e = cam.extrinsic;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      const double u = (j + 0.5) / res, v = (i + 0.5) / res;
      const Vec3 dc{(u - cx) / fx, (v - cy) / fy, 1.0};
      // world direction = R^T dc
      Vec3 dw{0, 0, 0};
      for (int a = 0; a < 3; ++a)
        for (int k = 0; k < 3; ++k) dw[static_cast<size_t>(a)] += e[static_cast<size_t>(k * 4 + a)] * dc[static_cast<size_t>(k)];
      dw = normalized(dw);
      const size_t idx = (static_cast<size_t>(i) * res + j) * 3;
      for (int k = 0; k < 3; ++k) {
        rays.origins[idx + k] = origin[static_cast<size_t>(k)];
        rays.directions[idx + k] = dw[static_cast<size_t>(k)];
      }
    }
  return rays;
}

std::vector<double> sample_along_ray(double near, double far, int n_samples, bool stratified, Rng* rng) {
  if (n_samples < 1) throw std::invalid_argument("sample_along_ray: n_samples must be >= 1");
  if (stratified && !rng) throw std::invalid_argument("sample_along_ray: stratified sampling needs an rng");
  std::vector<double> t(static_cast<size_t>(n_samples));
  const double width = (far - near) / n_samples;
  for (int i = 0; i < n_samples; ++i) {
    const double offset = stratified ? rng->uniform() : 0.5;
    t[static_cast<size_t>(i)] = near + (i + offset) * width;
  }
  return t;
}

// ---------------------------------------------------------------- compositing

CompositeResult composite(std::span<const double> densities, std::span<const double> features,
                          std::span<const double> deltas, std::span<const double> depths) {
  const auto n = densities.size();
  if (n == 0 || deltas.size() != n || depths.size() != n || features.size() % n != 0) {
    throw std::invalid_argument("composite: inconsistent sample counts");
  }
  for (size_t i = 0; i < n; ++i) {
    if (densities[i] < 0.0) throw std::invalid_argument("composite: negative density");
    if (!(deltas[i] > 0.0)) throw std::invalid_argument("composite: deltas must be positive");
  }
  const int q = static_cast<int>(features.size() / n);
  std::vector<double> out(static_cast<size_t>(q) + 2);
  composite_ray(densities.data(), deltas.data(), depths.data(), static_cast<int>(n), features.data(), q, nullptr,
                out.data(), nullptr);
  CompositeResult r;
  r.feature.assign(out.begin(), out.begin() + q);
  r.weight_sum = out[static_cast<size_t>(q)];
  r.depth = out[static_cast<size_t>(q) + 1];
  return r;
}

Tensor composite_rays(const Tensor& density, const Tensor& values, std::span<const double> deltas,
                      std::span<const double> depths, std::span<const double> background) {
  if (density.rank() != 2 || values.rank() != 3 || values.dim(0) != density.dim(0) || values.dim(1) != density.dim(1)) {
    throw std::invalid_argument(fmt::format("composite_rays: density {} vs values {}", shape_str(density.shape()),
                                            shape_str(values.shape())));
  }
  const int n = density.dim(0), s = density.dim(1), q = values.dim(2);
  if (static_cast<int64_t>(deltas.size()) != density.size() || static_cast<int64_t>(depths.size()) != density.size()) {
    throw std::invalid_argument("composite_rays: deltas/depths size mismatch");
  }
  if (!background.empty() && static_cast<int>(background.size()) != q) {
    throw std::invalid_argument("composite_rays: background size mismatch");
  }
  for (double v : density.data())
    if (v < 0.0) throw std::invalid_argument("composite_rays: negative density");
  std::vector<double> dl(deltas.begin(), deltas.end()), dp(depths.begin(), depths.end());
  std::vector<double> bg(background.begin(), background.end());
  const double* bgp = bg.empty() ? nullptr : bg.data();
  std::vector<double> out(static_cast<size_t>(n) * (q + 2));
  const auto& sv = density.data();
  const auto& vv = values.data();
  for (int r = 0; r < n; ++r) {
    const int64_t o = static_cast<int64_t>(r) * s;
    composite_ray(sv.data() + o, dl.data() + o, dp.data() + o, s, vv.data() + o * q, q, bgp,
                  out.data() + static_cast<int64_t>(r) * (q + 2), nullptr);
  }
  return make_result({n, q + 2}, std::move(out), {density, values}, [=](Node& self) {
    const auto& sigma = input_value(self, 0);
    const auto& vals = input_value(self, 1);
    const bool gs = wants_grad(self, 0), gv = wants_grad(self, 1);
    const double* bgp = bg.empty() ? nullptr : bg.data();
    double* dsig = gs ? input_grad(self, 0).data() : nullptr;
    double* dval = gv ? input_grad(self, 1).data() : nullptr;
    std::vector<double> w(static_cast<size_t>(s)), gw(static_cast<size_t>(s)), tnext(static_cast<size_t>(s));
    for (int r = 0; r < n; ++r) {
      const int64_t o = static_cast<int64_t>(r) * s;
      const double* g = self.grad.data() + static_cast<int64_t>(r) * (q + 2);
      const double* res = self.value.data() + static_cast<int64_t>(r) * (q + 2);
      const double wsum = res[q];
      double optical = 0.0;
      for (int i = 0; i < s; ++i) {
        const double t = std::exp(-optical);
        const double a = -std::expm1(-sigma[o + i] * dl[o + i]);
        w[i] = t * a;
        optical += sigma[o + i] * dl[o + i];
        tnext[i] = std::exp(-optical);
      }
      // depth = D / max(W, eps) with D = sum w t
      const bool wclamped = wsum < kDepthEps;
      const double inv_w = 1.0 / std::max(wsum, kDepthEps);
      const double depth = res[q + 1];
      for (int i = 0; i < s; ++i) {
        double acc = g[q];  // weight_sum
        const double* v = vals.data() + (o + i) * q;
        for (int k = 0; k < q; ++k) acc += g[k] * (v[k] - (bgp ? bgp[k] : 0.0));
        acc += g[q + 1] * (dp[o + i] - (wclamped ? 0.0 : depth)) * inv_w;
        gw[i] = acc;
        if (gv) {
          double* dv = dval + (o + i) * q;
          for (int k = 0; k < q; ++k) dv[k] += g[k] * w[i];
        }
      }
      if (gs) {
        // dL/dsigma_k = delta_k * (T_{k+1} gw_k - sum_{i>k} gw_i w_i)
        double suffix = 0.0;
        for (int k = s - 1; k >= 0; --k) {
          dsig[o + k] += dl[o + k] * (tnext[k] * gw[k] - suffix);
          suffix += gw[k] * w[k];
        }
      }
    }
  });
}

Tensor rows_to_image(const Tensor& rows, int batch, int height, int width) {
  const int q = rows.dim(1);
  const int64_t hw = static_cast<int64_t>(height) * width;
  if (rows.dim(0) != batch * hw) throw std::invalid_argument("rows_to_image: row count mismatch");
  std::vector<double> out(static_cast<size_t>(rows.size()));
  const auto& rv = rows.data();
  for (int b = 0; b < batch; ++b)
    for (int64_t p = 0; p < hw; ++p)
      for (int k = 0; k < q; ++k) out[static_cast<size_t>((static_cast<int64_t>(b) * q + k) * hw + p)] = rv[static_cast<size_t>((b * hw + p) * q + k)];
  return make_result({batch, q, height, width}, std::move(out), {rows}, [=](Node& self) {
    auto& g = input_grad(self, 0);
    for (int b = 0; b < batch; ++b)
      for (int64_t p = 0; p < hw; ++p)
        for (int k = 0; k < q; ++k) g[static_cast<size_t>((b * hw + p) * q + k)] += self.grad[static_cast<size_t>((static_cast<int64_t>(b) * q + k) * hw + p)];
  });
}

// ---------------------------------------------------------------- rendering

RaySamples make_ray_samples(std::span<const CameraParams> cams, const RenderOptions& opts, Rng* rng) {
  RaySamples rs;
  rs.batch = static_cast<int>(cams.size());
  rs.res = opts.resolution;
  rs.n_samples = opts.n_samples;
  const int64_t rays_per_cam = static_cast<int64_t>(opts.resolution) * opts.resolution;
  const int64_t total = rs.batch * rays_per_cam * opts.n_samples;
  std::vector<double> pts(static_cast<size_t>(total) * 3);
  rs.deltas.assign(static_cast<size_t>(total), (opts.far - opts.near) / opts.n_samples);
  rs.depths.resize(static_cast<size_t>(total));
  rs.inside.resize(static_cast<size_t>(total));
  int64_t idx = 0;
  for (const auto& cam : cams) {
    const RayBundle rays = generate_rays(cam, opts.resolution, opts.near, opts.far);
    for (int64_t r = 0; r < rays_per_cam; ++r) {
      const auto ts = sample_along_ray(opts.near, opts.far, opts.n_samples, opts.stratified, rng);
      for (double t : ts) {
        for (int k = 0; k < 3; ++k)
          pts[static_cast<size_t>(idx * 3 + k)] = rays.origins[static_cast<size_t>(r * 3 + k)] + t * rays.directions[static_cast<size_t>(r * 3 + k)];
        rs.depths[static_cast<size_t>(idx)] = t;
        const double* p = &pts[static_cast<size_t>(idx * 3)];
        rs.inside[static_cast<size_t>(idx)] = std::abs(p[0]) <= 1.0 && std::abs(p[1]) <= 1.0 && std::abs(p[2]) <= 1.0;
        ++idx;
      }
    }
  }
  rs.points = Tensor::from({rs.batch, static_cast<int>(rays_per_cam * opts.n_samples), 3}, std::move(pts));
  return rs;
}

RenderOutput composite_samples(const RaySamples& samples, const Tensor& density, const Tensor& features,
                               const RenderOptions& opts) {
  const int f = features.dim(1);
  if (f < 3) throw std::invalid_argument("composite_samples: need at least 3 feature channels");
  const int rays = samples.batch * samples.res * samples.res;
  Tensor colors = sigmoid(slice(features, 1, 0, 3));
  Tensor values = reshape(concat({features, colors}, 1), {rays, samples.n_samples, f + 3});
  std::vector<double> bg(static_cast<size_t>(f) + 3, 0.0);
  for (int k = 0; k < 3; ++k) bg[static_cast<size_t>(f + k)] = opts.background[static_cast<size_t>(k)];
  Tensor out = composite_rays(reshape(density, {rays, samples.n_samples}), values, samples.deltas, samples.depths, bg);
  Tensor img = rows_to_image(out, samples.batch, samples.res, samples.res);
  RenderOutput r;
  r.feature_image = slice(img, 1, 0, f);
  r.rgb_image = slice(img, 1, f, 3);
  r.weight_image = slice(img, 1, f + 3, 1);
  r.depth_image = slice(img, 1, f + 4, 1);
  return r;
}

RenderOutput render_batch(const Tensor& planes, const TriPlaneDecoder& decoder, std::span<const CameraParams> cams,
                          const RenderOptions& opts, Rng* rng) {
  if (planes.rank() != 5 || planes.dim(0) != static_cast<int>(cams.size())) {
    throw std::invalid_argument(fmt::format("render_batch: planes {} for {} cameras", shape_str(planes.shape()), cams.size()));
  }
  RaySamples samples = make_ray_samples(cams, opts, rng);
  Tensor feats = sample_triplanes(planes, samples.points);
  DecodedPoints dec = decoder.decode(feats);
  // The field is empty outside the tri-plane cube.
  Tensor density = dec.density * Tensor::from(dec.density.shape(), samples.inside);
  return composite_samples(samples, density, dec.features, opts);
}

RenderOutput render_image(const TriPlane& tp, const TriPlaneDecoder& decoder, const CameraParams& cam,
                          const RenderOptions& opts, Rng* rng) {
  Tensor planes = reshape(tp.planes, {1, 3, tp.channels(), tp.resolution(), tp.resolution()});
  return render_batch(planes, decoder, std::span<const CameraParams>(&cam, 1), opts, rng);
}

}  // namespace tg3d
