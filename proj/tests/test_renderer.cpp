#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "tg3d/renderer.hpp"
#include "tg3d/triplane.hpp"

using namespace tg3d;
using tg3d::testing::grad_rel_error;
using tg3d::testing::probe;
using tg3d::testing::random_leaf;

namespace {

// n equal bins over [near, far]; bins [lo, hi) carry density sigma and feature c.
struct Slab {
  int lo, hi;
  double sigma, c;
};

CompositeResult composite_slabs(int n, double near, double far, const std::vector<Slab>& slabs) {
  std::vector<double> dens(static_cast<size_t>(n), 0.0), feat(static_cast<size_t>(n), 0.0), delta(static_cast<size_t>(n)),
      depth(static_cast<size_t>(n));
  const double d = (far - near) / n;
  for (int i = 0; i < n; ++i) {
    delta[static_cast<size_t>(i)] = d;
    depth[static_cast<size_t>(i)] = near + (i + 0.5) * d;
  }
  for (const auto& s : slabs)
    for (int i = s.lo; i < s.hi; ++i) {
      dens[static_cast<size_t>(i)] = s.sigma;
      feat[static_cast<size_t>(i)] = s.c;
    }
  return composite(dens, feat, delta, depth);
}

}  // namespace

TEST(Composite, ConstantSlabMatchesClosedFormTransmittance) {
  const int n = 256;
  const double near = 1.7, far = 3.7, d = 2.0 / n;
  for (double sigma : {0.1, 1.0, 5.0, 40.0}) {
    const auto r = composite_slabs(n, near, far, {{64, 192, sigma, 1.0}});
    const double expect = 1.0 - std::exp(-sigma * 128 * d);
    EXPECT_NEAR(r.weight_sum, expect, 1e-12);
    EXPECT_NEAR(r.feature[0], expect, 1e-12);
  }
}

TEST(Composite, TwoSlabsOccludeInOrder) {
  const int n = 256;
  const double d = 2.0 / n, s1 = 2.0, s2 = 3.0, c1 = 0.3, c2 = 0.9;
  const auto r = composite_slabs(n, 1.7, 3.7, {{0, 100, s1, c1}, {100, 256, s2, c2}});
  const double t1 = std::exp(-s1 * 100 * d);
  const double expect = c1 * (1 - t1) + t1 * c2 * (1 - std::exp(-s2 * 156 * d));
  EXPECT_NEAR(r.feature[0], expect, 1e-12);
}

TEST(Composite, OpaqueBinSetsDepth) {
  const auto r = composite_slabs(64, 2.0, 3.0, {{10, 11, 1e6, 1.0}});
  EXPECT_NEAR(r.depth, 2.0 + 10.5 / 64, 1e-9);
  EXPECT_NEAR(r.weight_sum, 1.0, 1e-9);
}

TEST(Composite, EmptyRayHasZeroWeight) {
  const auto r = composite_slabs(16, 2.0, 3.0, {});
  EXPECT_EQ(r.weight_sum, 0.0);
  EXPECT_EQ(r.feature[0], 0.0);
}

TEST(Composite, RejectsBadInput) {
  std::vector<double> one{1.0};
  std::vector<double> neg{-1.0};
  EXPECT_THROW(composite(neg, one, one, one), std::invalid_argument);
  EXPECT_THROW(composite(one, one, std::vector<double>{0.0}, one), std::invalid_argument);
  EXPECT_THROW(composite({}, {}, {}, {}), std::invalid_argument);
}

TEST(Composite, BatchedMatchesScalarAndHasExactGradients) {
  Rng rng(5);
  const int n = 3, s = 6, q = 2;
  Tensor raw = random_leaf({n, s}, rng);
  Tensor values = random_leaf({n, s, q}, rng);
  std::vector<double> deltas(n * s, 0.25), depths(n * s);
  for (int i = 0; i < n * s; ++i) depths[static_cast<size_t>(i)] = 2.0 + 0.25 * (i % s);
  const std::vector<double> bg{0.5, 1.0};
  EXPECT_LT(grad_rel_error([&] { return probe(composite_rays(softplus(raw), values, deltas, depths, bg)); }, {raw, values}),
            1e-6);
  Tensor out = composite_rays(softplus(raw), values, deltas, depths);
  Tensor dens = softplus(raw);
  for (int r = 0; r < n; ++r) {
    auto sr = composite(dens.data().subspan(static_cast<size_t>(r * s), s), values.data().subspan(static_cast<size_t>(r * s * q), s * q),
                        std::span(deltas).subspan(static_cast<size_t>(r * s), s),
                        std::span(depths).subspan(static_cast<size_t>(r * s), s));
    EXPECT_NEAR(out.at(r * (q + 2)), sr.feature[0], 1e-12);
    EXPECT_NEAR(out.at(r * (q + 2) + q), sr.weight_sum, 1e-12);
  }
}

TEST(Camera, OrbitCameraLooksAtOrigin) {
  for (double yaw : {-0.5, 0.0, 0.7})
    for (double pitch : {-0.2, 0.0, 0.3}) {
      const auto cam = orbit_camera(yaw, pitch, 2.7, 1.4);
      EXPECT_NO_THROW(cam.validate());
      const Vec3 c = cam.center();
      EXPECT_NEAR(std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]), 2.7, 1e-12);
      const auto rays = generate_rays(cam, 2, 1.7, 3.7);
      // mean of the 4 central-ish directions points at the origin
      Vec3 m{0, 0, 0};
      for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 3; ++k) m[static_cast<size_t>(k)] += rays.directions[static_cast<size_t>(i * 3 + k)];
      const double nm = std::sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(m[static_cast<size_t>(k)] / nm, -c[static_cast<size_t>(k)] / 2.7, 1e-12);
    }
}

TEST(Camera, FrontalCameraUsesOpenCvAxes) {
  const auto cam = orbit_camera(0, 0, 2.7, 1.4);
  const auto rays = generate_rays(cam, 2, 1.7, 3.7);
  // top-left pixel: world +y is up, camera y is down -> upper rows look toward +y;
  // camera x is right -> looking down -z from +z, right is +x.
  EXPECT_GT(rays.directions[1], 0.0);
  EXPECT_LT(rays.directions[0], 0.0);
  EXPECT_LT(rays.directions[2], 0.0);
}

TEST(Camera, VectorRoundTripAndValidation) {
  const auto cam = orbit_camera(0.3, -0.1, 2.7, 1.4);
  const auto v = cam.to_vector();
  const auto back = CameraParams::from_vector(v);
  EXPECT_EQ(back.extrinsic, cam.extrinsic);
  EXPECT_EQ(back.intrinsic, cam.intrinsic);
  auto bad = cam;
  bad.extrinsic[0] = 2.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cam;
  bad.intrinsic[0] = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Sampling, MidpointsAndStratifiedStayInBins) {
  const auto mid = sample_along_ray(2.0, 3.0, 4, false, nullptr);
  ASSERT_EQ(mid.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(mid[static_cast<size_t>(i)], 2.0 + (i + 0.5) * 0.25);
  Rng rng(1);
  const auto st = sample_along_ray(2.0, 3.0, 8, true, &rng);
  for (int i = 0; i < 8; ++i) {
    EXPECT_GE(st[static_cast<size_t>(i)], 2.0 + i * 0.125);
    EXPECT_LT(st[static_cast<size_t>(i)], 2.0 + (i + 1) * 0.125);
  }
  EXPECT_THROW(sample_along_ray(2.0, 3.0, 8, true, nullptr), std::invalid_argument);
}

TEST(TriPlane, LookupIsSumOfBilinearPlaneValues) {
  // Planes linear in their coordinates reproduce the linear function exactly.
  const int r = 5, c = 1;
  std::vector<double> v(3 * c * r * r);
  for (int k = 0; k < 3; ++k)
    for (int row = 0; row < r; ++row)
      for (int col = 0; col < r; ++col) {
        const double u = -1.0 + 2.0 * col / (r - 1), w = -1.0 + 2.0 * row / (r - 1);
        v[static_cast<size_t>((k * r + row) * r + col)] = (k + 1) * u + 10 * (k + 1) * w;
      }
  const auto tp = TriPlane::from_tensor(Tensor::from({3, c, r, r}, v));
  const Vec3 p{0.13, -0.41, 0.77};
  // XY: (x, y), XZ: (x, z), YZ: (y, z)
  const double expect = (p[0] + 10 * p[1]) + 2 * (p[0] + 10 * p[2]) + 3 * (p[1] + 10 * p[2]);
  EXPECT_NEAR(sample_triplane(tp, p)[0], expect, 1e-12);
  // outside the cube: clamped to the boundary
  EXPECT_NEAR(sample_triplane(tp, {2.0, 0.0, 0.0})[0], sample_triplane(tp, {1.0, 0.0, 0.0})[0], 1e-12);
  EXPECT_THROW(sample_triplane(tp, {NAN, 0.0, 0.0}), std::invalid_argument);
}

TEST(TriPlane, GradientsWrtPlanesAndPoints) {
  Rng rng(8);
  Tensor planes = random_leaf({2, 3, 2, 4, 4}, rng);
  Tensor pts = Tensor::parameter({2, 3, 3}, {0.1, -0.3, 0.45, -0.7, 0.2, 0.33, 0.61, 0.52, -0.12,
                                             -0.2, 0.4, 0.1, 0.9, -0.8, 0.05, -0.55, 0.25, 0.7});
  EXPECT_LT(grad_rel_error([&] { return probe(sample_triplanes(planes, pts)); }, {planes, pts}), 1e-6);
}

TEST(Decoder, DecodePointMatchesBatchAndHasGradients) {
  Rng rng(9);
  TriPlaneDecoder dec({4, 8, 3}, rng);
  Tensor f = random_leaf({5, 4}, rng);
  auto batch = dec.decode(f);
  const auto one = dec.decode_point(f.data().subspan(4, 4));
  EXPECT_NEAR(one.density, batch.density.at(1), 1e-14);
  EXPECT_GE(one.density, 0.0);
  ASSERT_EQ(one.feature.size(), 3u);
  std::vector<Tensor> leaves{f};
  for (const auto& p : dec.params().items()) leaves.push_back(p.tensor);
  EXPECT_LT(grad_rel_error(
                [&] {
                  auto d = dec.decode(f);
                  return probe(d.density) + probe(d.features, 3);
                },
                leaves),
            1e-6);
}

TEST(Render, RenderImageGradientMatchesFiniteDifferences) {
  Rng rng(10);
  TriPlaneDecoder dec({2, 4, 3}, rng);
  Tensor planes = random_leaf({3, 2, 4, 4}, rng, 0.5);
  RenderOptions opts;
  opts.resolution = 3;
  opts.n_samples = 6;
  const auto cam = orbit_camera(0.2, 0.1, 2.7, 1.4);
  std::vector<Tensor> leaves{planes};
  for (const auto& p : dec.params().items()) leaves.push_back(p.tensor);
  EXPECT_LT(grad_rel_error(
                [&] {
                  auto out = render_image(TriPlane{planes}, dec, cam, opts);
                  return probe(out.rgb_image) + probe(out.feature_image, 4) + probe(out.depth_image, 5);
                },
                leaves),
            1e-6);
}

TEST(Render, FieldIsEmptyOutsideCube) {
  Rng rng(11);
  TriPlaneDecoder dec({2, 4, 3}, rng);
  Tensor planes = Tensor::full({3, 2, 4, 4}, 0.0);  // softplus keeps density positive everywhere inside
  RenderOptions opts;
  opts.resolution = 16;
  opts.n_samples = 16;
  // wide field of view: the corner rays pass beside the cube
  const auto cam = orbit_camera(0.0, 0.0, 2.7, 0.5);
  const auto out = render_image(TriPlane{planes}, dec, cam, opts);
  EXPECT_EQ(out.weight_image.at(0), 0.0);
  EXPECT_GT(out.weight_image.at(8 * 16 + 8), 0.0);
}

TEST(Mesh, SphereHasEulerCharacteristicTwo) {
  const DensityField sphere = [](std::span<const Vec3> pts, std::span<double> d) {
    for (size_t i = 0; i < pts.size(); ++i) {
      const auto& p = pts[i];
      d[i] = 1.0 - std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 0.6;
    }
  };
  const auto mesh = extract_mesh(sphere, 24, 0.0);
  EXPECT_FALSE(mesh.faces.empty());
  EXPECT_EQ(euler_characteristic(mesh), 2);
  for (const auto& v : mesh.vertices) {
    EXPECT_NEAR(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]), 0.6, 2.0 / 23);
  }
}

TEST(Mesh, EmptyFieldGivesEmptyMesh) {
  const DensityField empty = [](std::span<const Vec3>, std::span<double> d) { std::fill(d.begin(), d.end(), 0.0); };
  const auto mesh = extract_mesh(empty, 8, 0.5);
  EXPECT_TRUE(mesh.faces.empty());
  EXPECT_THROW(extract_mesh(empty, 1, 0.5), std::invalid_argument);
}
