#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"
#include "tg3d/guidance.hpp"

using namespace tg3d;

namespace {

GeneratorConfig small_generator() {
  GeneratorConfig c;
  c.z_dim = 4;
  c.text_dim = 8;
  c.w_dim = 8;
  c.base_channels = 4;
  c.plane_channels = 4;
  c.plane_res = 8;
  c.image_res = 8;
  c.upsampler_channels = 4;
  c.decoder = DecoderConfig{4, 8, 4};
  c.render.resolution = 8;
  c.render.n_samples = 8;
  return c;
}

struct Toy {
  Rng rng{1};
  Generator g{small_generator(), rng};
  HashedTextEncoder text{8, 0};
  ConvImageEncoder image{ImageEncoderConfig{8, 8, 8, 2}, rng};
  std::vector<double> z{0.5, -0.2, 0.1, 0.9};
};

GuidanceOptions quick(int iters, double lr) {
  GuidanceOptions o;
  o.iters = iters;
  o.lr = lr;
  o.poses_per_step = 2;
  o.render_res = 8;
  return o;
}

}  // namespace

TEST(Guidance, CloneFreezeCopiesValuesAndDetaches) {
  Toy s;
  Generator f = clone_freeze(s.g);
  EXPECT_EQ(f.hash(), s.g.hash());
  for (const auto& p : f.named_parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
  for (const auto& p : s.g.named_parameters()) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
  Tensor w = f.params()[0];
  w.mutable_data()[0] += 1.0;
  EXPECT_NE(f.hash(), s.g.hash());
}

TEST(Guidance, ZeroItersOrZeroLrIsIdentity) {
  Toy s;
  const uint64_t h = s.g.hash();
  auto r0 = run_directional_guidance(s.g, "a red-tinted face", "Photo", s.z, s.text, s.image, quick(0, 0.002));
  EXPECT_EQ(r0.tuned.hash(), h);
  EXPECT_TRUE(r0.losses.empty());
  auto r1 = run_directional_guidance(s.g, "a red-tinted face", "Photo", s.z, s.text, s.image, quick(3, 0.0));
  EXPECT_EQ(r1.tuned.hash(), h);
  EXPECT_EQ(r1.losses.size(), 3u);
}

TEST(Guidance, IdenticalPromptsFailBeforeIterating) {
  Toy s;
  EXPECT_THROW(run_directional_guidance(s.g, "Photo", "photo", s.z, s.text, s.image, quick(5, 0.002)),
               std::invalid_argument);
  EXPECT_THROW(run_directional_guidance(s.g, "red", "Photo", std::vector<double>{1.0}, s.text, s.image, quick(1, 0.1)),
               std::invalid_argument);
}

TEST(Guidance, TuningLeavesInputGeneratorUntouched) {
  Toy s;
  const uint64_t h = s.g.hash();
  auto r = run_directional_guidance(s.g, "a red-tinted face", "Photo", s.z, s.text, s.image, quick(4, 0.01));
  EXPECT_EQ(s.g.hash(), h);
  EXPECT_NE(r.tuned.hash(), h);
  ASSERT_EQ(r.losses.size(), 4u);
  for (double l : r.losses) {
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
  }
}

TEST(Inversion, ZeroIterationsReturnInitialization) {
  Toy s;
  InversionOptions o;
  o.stage1_iters = 0;
  o.stage2_iters = 0;
  o.render_res = 8;
  o.seed = 3;
  const Image target(8, 8, 0.5);
  const auto r = invert_image(s.g, target, PoseDistribution{}.canonical(), s.text, nullptr, o);
  Rng rng(3);
  EXPECT_EQ(r.z, rng.normal_vector(4));
  EXPECT_EQ(r.e, std::vector<double>(8, 0.0));
  EXPECT_EQ(r.tuned.hash(), s.g.hash());
  EXPECT_EQ(r.stage1_l2, r.init_l2);
  EXPECT_EQ(r.stage2_l2, r.init_l2);
}

TEST(Inversion, StageOneApproachesRealizableTarget) {
  Toy s;
  const auto cam = orbit_camera(0.2, 0.0, 2.7, 1.4);
  Image target;
  {
    NoGradGuard ng;
    const auto e = s.text.encode("red hair blue eyes");
    target = to_image(s.g.forward(Tensor::from({1, 4}, s.z), Tensor::from({1, 8}, e.values),
                                  std::vector<CameraParams>{cam}, 8)
                          .image);
  }
  InversionOptions o;
  o.stage1_iters = 40;
  o.stage2_iters = 20;
  o.render_res = 8;
  const auto r = invert_image(s.g, target, cam, s.text, nullptr, o);
  EXPECT_FALSE(r.aborted);
  EXPECT_LE(r.stage1_l2, r.init_l2);
  EXPECT_LE(r.stage2_l2, r.stage1_l2);
  EXPECT_EQ(r.stage1_losses.size(), 40u);
  EXPECT_THROW(invert_image(s.g, Image(4, 4), cam, s.text, nullptr, o), std::invalid_argument);
}
