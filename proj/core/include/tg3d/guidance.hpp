#pragma once

#include <optional>
#include <vector>

#include "tg3d/data.hpp"
#include "tg3d/encoders.hpp"
#include "tg3d/networks.hpp"

namespace tg3d {

/// Deep copy with every parameter marked non-trainable.
Generator clone_freeze(const Generator& g);

struct GuidanceOptions {
  int poses_per_step = 4;  // M
  int iters = 100;
  double lr = 0.002;
  int render_res = 16;
  uint64_t seed = 0;  // pose sampling
  PoseDistribution poses;
};

struct GuidanceResult {
  Generator tuned;
  std::vector<double> losses;  // one per iteration
};

/// Fine-tunes a copy of `g` so that the image-embedding change from the frozen
/// generator follows the text direction E_T(s_star) - E_T(s_o). `z` is held fixed
/// and both generators render (z, s_star) from the same sampled poses.
GuidanceResult run_directional_guidance(const Generator& g, const TextInput& s_star, const TextInput& s_o,
                                        std::span<const double> z, const TextEncoder& text_encoder,
                                        const ImageEncoder& image_encoder, const GuidanceOptions& opts = {});

struct InversionOptions {
  int stage1_iters = 200;
  int stage2_iters = 100;
  double lr_latent = 0.03;
  double lr_generator = 3e-4;
  double feature_weight = 0.1;
  bool optimize_text = true;  // false: only z is optimized in stage 1
  std::optional<TextInput> init_text;  // ē starts here, otherwise at zero
  int render_res = 16;
  uint64_t seed = 0;  // initial z
};

struct InversionResult {
  std::vector<double> z;
  std::vector<double> e;
  Generator tuned;
  double init_l2 = 0.0;
  double stage1_l2 = 0.0;
  double stage2_l2 = 0.0;
  std::vector<double> stage1_losses;
  std::vector<double> stage2_losses;
  bool aborted = false;  // a non-finite loss stopped optimization early
};

/// Mean squared pixel difference of two equally sized images.
double pixel_l2(const Image& a, const Image& b);

/// Two-stage inversion: stage 1 optimizes (z, ē) against the target with `g` fixed,
/// stage 2 fine-tunes a copy of `g` around that pivot. `features`, when given,
/// adds a feature-space L2 term.
InversionResult invert_image(const Generator& g, const Image& target, const CameraParams& target_cam,
                             const TextEncoder& text_encoder, const ConvImageEncoder* features,
                             const InversionOptions& opts = {});

}  // namespace tg3d
