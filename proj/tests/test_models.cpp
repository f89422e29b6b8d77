#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tg3d/metrics.hpp"
#include "tg3d/networks.hpp"

using namespace tg3d;
using tg3d::testing::grad_rel_error;
using tg3d::testing::probe;
using tg3d::testing::random_leaf;

namespace {

GeneratorConfig tiny_generator() {
  GeneratorConfig c;
  c.z_dim = 3;
  c.text_dim = 4;
  c.w_dim = 6;
  c.base_channels = 4;
  c.plane_channels = 3;
  c.plane_res = 8;
  c.image_res = 8;
  c.upsampler_channels = 3;
  c.decoder = DecoderConfig{3, 5, 4};
  c.render.resolution = 4;
  c.render.n_samples = 6;
  return c;
}

void fill(ParamSet& p, double v) {
  for (auto& item : p.items())
    for (auto& x : item.tensor.mutable_data()) x = v;
}

std::vector<double> eye(int n) {
  std::vector<double> v(static_cast<size_t>(n * n), 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
  return v;
}

}  // namespace

// ---------------------------------------------------------------- networks

TEST(Generator, ZeroMappingGivesBias) {
  Rng rng(1);
  Generator g(tiny_generator(), rng);
  fill(g.params(), 0.0);
  auto bias = g.params().get("mapping1.bias");
  const std::vector<double> b{0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
  std::copy(b.begin(), b.end(), bias.mutable_data().begin());
  Rng r(2);
  Tensor w = g.map_latent(Tensor::from({2, 3}, r.normal_vector(6)), Tensor::from({2, 4}, r.normal_vector(8)),
                          camera_tensor(std::vector<CameraParams>(2, PoseDistribution{}.canonical())));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_EQ(w.at(i * 6 + j), b[static_cast<size_t>(j)]);
}

TEST(Generator, ReproducibleAndShaped) {
  Rng r1(3), r2(3);
  Generator a(tiny_generator(), r1), b(tiny_generator(), r2);
  EXPECT_EQ(a.hash(), b.hash());
  HashedTextEncoder enc(4, 0);
  const std::vector<double> z{0.1, 0.2, -0.3};
  const auto cam = PoseDistribution{}.canonical();
  const auto ya = a.generate(z, "red hair", cam, enc), yb = b.generate(z, "red hair", cam, enc);
  EXPECT_EQ(ya.image.shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(ya.planes.shape(), (Shape{1, 3, 3, 8, 8}));
  for (int i = 0; i < ya.image.size(); ++i) ASSERT_EQ(ya.image.at(i), yb.image.at(i));
  for (double v : ya.image.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(a.generate(std::vector<double>{1.0}, "red hair", cam, enc), std::invalid_argument);
}

TEST(Generator, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Generator g(tiny_generator(), rng);
  Rng r(5);
  Tensor z = random_leaf({2, 3}, r), e = random_leaf({2, 4}, r);
  const std::vector<CameraParams> cams{orbit_camera(0.2, 0.1, 2.7, 1.4), orbit_camera(-0.3, 0.0, 2.7, 1.4)};
  auto f = [&] { return probe(g.forward(z, e, cams, 4).image); };
  EXPECT_LT(grad_rel_error(f, {z, e}), 1e-4);
  EXPECT_LT(grad_rel_error(f, {g.params().get("mapping0.weight"), g.params().get("block8.weight"),
                               g.params().get("up1.weight"), g.decoder().params()[0]}),
            1e-4);
}

TEST(Discriminator, ZeroWeightsGiveBiasAndInputGradient) {
  DiscriminatorConfig cfg{8, 4, 4, 6};
  Rng rng(6);
  Discriminator d(cfg, rng);
  Rng r(7);
  Tensor x = random_leaf({2, 3, 8, 8}, r, 0.3), e = random_leaf({2, 4}, r);
  Tensor p = camera_tensor(std::vector<CameraParams>(2, PoseDistribution{}.canonical()));
  EXPECT_LT(grad_rel_error([&] { return probe(d(x, e, p)); }, {x, e}), 1e-4);
  fill(d.params(), 0.0);
  Tensor ob = d.params().get("out.bias");
  ob.mutable_data()[0] = 0.75;
  Tensor logits = d(x, e, p);
  EXPECT_EQ(logits.at(0), 0.75);
  EXPECT_EQ(logits.at(1), 0.75);
}

TEST(Alignment, PartsTokensAndClassifier) {
  AlignmentConfig cfg;
  cfg.part_res = 8;
  cfg.feature_dim = 4;
  cfg.text_dim = 4;
  cfg.heads = 2;
  cfg.n_tokens = 3;
  cfg.n_attributes = 5;
  cfg.classifier_hidden = 6;
  cfg.width = 2;
  Rng rng(8);
  AlignmentModule c(cfg, rng);
  Rng r(9);
  const auto one = r.normal_vector(3 * 64);
  std::vector<double> twice(one);
  twice.insert(twice.end(), one.begin(), one.end());
  Tensor f = c.extract_part_features(Tensor::from({2, 3, 8, 8}, twice));
  for (int j = 0; j < 4; ++j) EXPECT_EQ(f.at(j), f.at(4 + j));

  // identity W_K with zero bias leaves H unchanged
  Tensor h = Tensor::from({3, 4}, r.normal_vector(12));
  Tensor wk = c.params().get("lk.head1.weight"), bk = c.params().get("lk.head1.bias");
  const auto id = eye(4);
  std::copy(id.begin(), id.end(), wk.mutable_data().begin());
  std::fill_n(bk.mutable_data().begin(), 4, 0.0);
  Tensor k = c.project_tokens(h, 1);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(k.at(i), h.at(i));

  Tensor crops = random_leaf({3, 3, 8, 8}, r, 0.5);
  const std::vector<int> counts{2, 1};
  EXPECT_LT(grad_rel_error([&] { return probe(c.predict(crops, counts, h)); }, {crops}), 1e-4);
  EXPECT_THROW(c.predict(crops, std::vector<int>{2, 2}, h), std::invalid_argument);

  for (auto& item : c.params().items())
    if (item.name.starts_with("gamma.")) std::fill(item.tensor.mutable_data().begin(), item.tensor.mutable_data().end(), 0.0);
  Tensor probs = c.predict(crops, counts, h);
  EXPECT_EQ(probs.shape(), (Shape{2, 5}));
  for (double v : probs.data()) EXPECT_EQ(v, 0.5);
}

// ---------------------------------------------------------------- metrics

TEST(ClipScore, ParallelOrthogonalAntiParallel) {
  Embedding a{{1.0, 0.0}}, b{{0.0, 1.0}}, c{{-1.0, 0.0}};
  EXPECT_DOUBLE_EQ(clip_score(a, a), 100.0);
  EXPECT_DOUBLE_EQ(clip_score(a, b), 0.0);
  EXPECT_DOUBLE_EQ(clip_score(a, c), 0.0);
  Embedding d{{std::sqrt(0.5), std::sqrt(0.5)}};
  EXPECT_NEAR(clip_score(a, d), 100.0 * std::sqrt(0.5), 1e-12);
}

TEST(Mvic, IdenticalViewsAndSinglePair) {
  HistogramIdentityEncoder id;
  Image a(8, 8, 1.0), b(8, 8, 1.0);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) {
      a.at(y, x, 0) = 0.2;
      b.at(y, x, 2) = 0.1;
    }
  const std::vector<Image> same{a, a, a};
  EXPECT_NEAR(mvic(same, id), 1.0, 1e-12);
  const std::vector<Image> pair{a, b};
  const auto ea = id.encode(a), eb = id.encode(b);
  double dot = 0.0;
  for (int i = 0; i < ea.dim(); ++i) dot += ea.values[static_cast<size_t>(i)] * eb.values[static_cast<size_t>(i)];
  EXPECT_NEAR(mvic(pair, id), dot, 1e-12);
  EXPECT_THROW(mvic(std::vector<Image>{a}, id), std::invalid_argument);
}

TEST(Mvic, GeneratorOverloadMatchesViews) {
  Rng rng(10);
  Generator g(tiny_generator(), rng);
  HashedTextEncoder enc(4, 0);
  HistogramIdentityEncoder id;
  const std::vector<double> z{0.3, -0.1, 0.5};
  const auto poses = PoseDistribution{}.ring(3);
  const auto cond = PoseDistribution{}.canonical();
  const double m = mvic(g, z, "blond hair", poses, cond, enc, id);
  EXPECT_GE(m, -1.0);
  EXPECT_LE(m, 1.0 + 1e-12);
  const auto single = std::vector<CameraParams>(3, poses[0]);
  EXPECT_NEAR(mvic(g, z, "blond hair", single, cond, enc, id), 1.0, 1e-12);
}

TEST(Fid, IdenticalSetsGiveZero) {
  Rng rng(11);
  Tensor a = Tensor::from({50, 4}, rng.normal_vector(200));
  EXPECT_LE(std::abs(fid(a, a)), 1e-6);
}

TEST(Fid, AnalyticCases) {
  const std::vector<double> zero{0.0, 0.0, 0.0}, mu{0.5, -1.0, 2.0};
  const auto i3 = eye(3);
  EXPECT_NEAR(frechet_distance(zero, i3, mu, i3, 3), 0.25 + 1.0 + 4.0, 1e-6);
  // 4I vs I in 2-d: per dimension (2 - 1)^2
  std::vector<double> four = eye(2);
  for (auto& v : four) v *= 4.0;
  const std::vector<double> z2{0.0, 0.0};
  EXPECT_NEAR(frechet_distance(z2, four, z2, eye(2), 2), 2.0, 1e-6);
  EXPECT_THROW(frechet_distance(z2, four, mu, i3, 2), std::invalid_argument);
}

TEST(Fid, SymmetricAndSampleShift) {
  Rng rng(12);
  const int n = 4000, d = 2;
  auto a = rng.normal_vector(static_cast<size_t>(n * d));
  auto b = rng.normal_vector(static_cast<size_t>(n * d));
  for (int i = 0; i < n; ++i) b[static_cast<size_t>(i * d)] += 1.0;
  Tensor ta = Tensor::from({n, d}, a), tb = Tensor::from({n, d}, b);
  EXPECT_NEAR(fid(ta, tb), fid(tb, ta), 1e-8);
  EXPECT_NEAR(fid(ta, tb), 1.0, 0.1);
}

TEST(Metrics, ReportSchemaRejectsBadReports) {
  MetricsReport r;
  r.n_samples = 3;
  r.per_attribute_accuracy = {0.5, 0.5};
  auto j = r.to_json();
  EXPECT_EQ(validate_metrics_report(j), "");
  j.erase("fid");
  EXPECT_NE(validate_metrics_report(j), "");
}
