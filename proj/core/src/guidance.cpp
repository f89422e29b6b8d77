#include "tg3d/guidance.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

#include "tg3d/losses.hpp"

namespace tg3d {

Generator clone_freeze(const Generator& g) {
  Generator frozen = g;
  frozen.params().set_trainable(false);
  frozen.decoder().params().set_trainable(false);
  return frozen;
}

namespace {

Tensor row_vector(std::span<const double> v) { return Tensor::from({1, static_cast<int>(v.size())}, {v.begin(), v.end()}); }

Tensor repeat(const Tensor& row, int n) {
  std::vector<Tensor> rows(static_cast<size_t>(n), row);
  return n == 1 ? row : concat(rows, 0);
}

}  // namespace

GuidanceResult run_directional_guidance(const Generator& g, const TextInput& s_star, const TextInput& s_o,
                                        std::span<const double> z, const TextEncoder& text_encoder,
                                        const ImageEncoder& image_encoder, const GuidanceOptions& opts) {
  if (opts.poses_per_step < 1) throw std::invalid_argument("guidance needs at least one pose per step");
  if (opts.iters < 0) throw std::invalid_argument("guidance iterations must be >= 0");
  if (static_cast<int>(z.size()) != g.config().z_dim) throw std::invalid_argument("guidance: z dimension mismatch");
  const std::vector<double> v_t = text_direction(text_encoder, s_star, s_o);

  const Generator frozen = clone_freeze(g);
  GuidanceResult result{g, {}};
  Adam opt(result.tuned.named_parameters(), AdamOptions{opts.lr, 0.9, 0.999});
  Rng rng(opts.seed);
  const int m = opts.poses_per_step;
  const Tensor zt = repeat(row_vector(z), m);
  const Tensor et = repeat(row_vector(text_encoder.encode(s_star).values), m);

  for (int it = 0; it < opts.iters; ++it) {
    std::vector<CameraParams> cams;
    for (int i = 0; i < m; ++i) cams.push_back(opts.poses.sample(rng));
    Tensor frozen_emb;
    {
      NoGradGuard no_grad;
      frozen_emb = image_encoder.encode(frozen.forward(zt, et, cams, opts.render_res).image);
    }
    opt.zero_grad();
    Tensor cur_emb = image_encoder.encode(result.tuned.forward(zt, et, cams, opts.render_res).image);
    Tensor loss = dcg_loss(cur_emb, frozen_emb, v_t);
    const double l = loss.item();
    if (!std::isfinite(l)) throw std::runtime_error(fmt::format("non-finite guidance loss at iteration {}", it));
    result.losses.push_back(l);
    loss.backward();
    opt.step();
  }
  return result;
}

double pixel_l2(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("pixel_l2: image size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

InversionResult invert_image(const Generator& g, const Image& target, const CameraParams& target_cam,
                             const TextEncoder& text_encoder, const ConvImageEncoder* features,
                             const InversionOptions& opts) {
  const auto& gc = g.config();
  if (target.height != gc.image_res || target.width != gc.image_res) {
    throw std::invalid_argument(fmt::format("inversion target must be {0}x{0}", gc.image_res));
  }
  if (opts.stage1_iters < 0 || opts.stage2_iters < 0) throw std::invalid_argument("inversion iterations must be >= 0");
  const std::span<const CameraParams> cams(&target_cam, 1);
  const Tensor x_target = to_tensor(target);
  Tensor f_target;
  if (features) {
    NoGradGuard no_grad;
    f_target = features->features(x_target);
  }
  auto objective = [&](const Tensor& img, double* pixel) {
    Tensor pix = mean(square(img - x_target));
    *pixel = pix.item();
    if (!features || opts.feature_weight <= 0.0) return pix;
    return pix + mean(square(features->features(img) - f_target)) * opts.feature_weight;
  };

  InversionResult r;
  Rng rng(opts.seed);
  r.z = rng.normal_vector(static_cast<size_t>(gc.z_dim));
  r.e = opts.init_text ? text_encoder.encode(*opts.init_text).values : std::vector<double>(static_cast<size_t>(gc.text_dim), 0.0);
  r.tuned = g;

  auto render_l2 = [&](const Generator& gen) {
    NoGradGuard no_grad;
    return pixel_l2(to_image(gen.forward(row_vector(r.z), row_vector(r.e), cams, opts.render_res).image), target);
  };
  r.init_l2 = render_l2(g);

  // Stage 1: latent pivot with the generator fixed.
  {
    const Generator fixed = clone_freeze(g);
    Tensor z = Tensor::parameter({1, gc.z_dim}, r.z);
    Tensor e = Tensor::parameter({1, gc.text_dim}, r.e);
    std::vector<NamedParam> leaves{{"z", z}};
    if (opts.optimize_text) leaves.push_back({"e", e});
    Adam opt(leaves, AdamOptions{opts.lr_latent, 0.9, 0.999});
    for (int it = 0; it < opts.stage1_iters; ++it) {
      opt.zero_grad();
      double pixel = 0.0;
      Tensor loss = objective(fixed.forward(z, e, cams, opts.render_res).image, &pixel);
      if (!std::isfinite(loss.item())) {
        r.aborted = true;
        break;
      }
      r.stage1_losses.push_back(pixel);
      loss.backward();
      opt.step();
    }
    if (!r.aborted) {
      r.z.assign(z.data().begin(), z.data().end());
      r.e.assign(e.data().begin(), e.data().end());
    }
  }
  r.stage1_l2 = render_l2(g);

  // Stage 2: tune the generator around the pivot.
  if (!r.aborted && opts.stage2_iters > 0) {
    Adam opt(r.tuned.named_parameters(), AdamOptions{opts.lr_generator, 0.9, 0.999});
    const Tensor z = row_vector(r.z), e = row_vector(r.e);
    for (int it = 0; it < opts.stage2_iters; ++it) {
      opt.zero_grad();
      double pixel = 0.0;
      Tensor loss = objective(r.tuned.forward(z, e, cams, opts.render_res).image, &pixel);
      if (!std::isfinite(loss.item())) {
        r.aborted = true;
        break;
      }
      r.stage2_losses.push_back(pixel);
      loss.backward();
      opt.step();
    }
  }
  r.stage2_l2 = render_l2(r.tuned);
  return r;
}

}  // namespace tg3d
