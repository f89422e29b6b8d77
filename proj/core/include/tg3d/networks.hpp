#pragma once

#include <span>
#include <vector>

#include "tg3d/encoders.hpp"
#include "tg3d/layers.hpp"
#include "tg3d/params.hpp"
#include "tg3d/renderer.hpp"
#include "tg3d/triplane.hpp"

namespace tg3d {

struct GeneratorConfig {
  int z_dim = 64;
  int text_dim = 64;
  int w_dim = 128;
  int mapping_layers = 2;
  int base_channels = 64;
  int plane_channels = 16;
  int plane_res = 32;
  int image_res = 32;
  int upsampler_channels = 16;
  bool camera_conditioning = true;
  DecoderConfig decoder;
  RenderOptions render;
};

/// Modulated 3x3 convolution: the style scales input channels, the kernel is
/// applied, and outputs are demodulated per sample.
struct ModConv {
  size_t weight = 0;  // [out, in, k, k]
  size_t bias = 0;    // [out]
  Linear affine;      // w -> per-input-channel style
  int pad = 1;
  bool demodulate = true;

  static ModConv make(ParamSet& params, const std::string& name, int in, int out, int k, int w_dim, Rng& rng,
                      bool demodulate = true);
  Tensor operator()(const ParamSet& params, const Tensor& x, const Tensor& w) const;
};

struct GeneratorOutput {
  Tensor planes;      // [B, 3, C, R, R]
  RenderOutput low;   // neural render at the requested resolution
  Tensor image;       // [B, 3, image_res, image_res], final upsampled image
};

/// Text-conditional tri-plane generator: mapping network, modulated-conv
/// backbone, point decoder, volume renderer, and convolutional upsampler.
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& cfg, Rng& rng);

  const GeneratorConfig& config() const { return cfg_; }

  /// [z | e * sqrt(D) | p] -> w. z [B, z_dim], e [B, text_dim], p [B, 25].
  Tensor map_latent(const Tensor& z, const Tensor& e, const Tensor& p) const;
  /// w [B, w_dim] -> planes [B, 3, C, R, R].
  Tensor synthesize_planes(const Tensor& w) const;
  /// Low-res feature image [B, F, h, h] plus its RGB -> final image.
  Tensor upsample(const RenderOutput& low) const;

  /// `cond` conditions the mapping network, `cams` are rendered. Passing an empty
  /// `cond` uses `cams`. Without an rng, samples sit at bin midpoints.
  GeneratorOutput forward(const Tensor& z, const Tensor& e, std::span<const CameraParams> cams,
                          std::span<const CameraParams> cond, int render_res, Rng* rng = nullptr) const;
  GeneratorOutput forward(const Tensor& z, const Tensor& e, std::span<const CameraParams> cams, int render_res,
                          Rng* rng = nullptr) const {
    return forward(z, e, cams, {}, render_res, rng);
  }

  /// Single-sample convenience: encodes the text and renders at the configured resolution.
  GeneratorOutput generate(std::span<const double> z, const TextInput& text, const CameraParams& cam,
                           const TextEncoder& encoder) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  TriPlaneDecoder& decoder() { return decoder_; }
  const TriPlaneDecoder& decoder() const { return decoder_; }
  /// Aliasing view of every parameter ("net." and "decoder." prefixes).
  std::vector<NamedParam> named_parameters() const;
  uint64_t hash() const { return hash_params(named_parameters()); }

 private:
  GeneratorConfig cfg_;
  ParamSet params_;
  TriPlaneDecoder decoder_;
  std::vector<Linear> mapping_;
  size_t const_input_ = 0;
  std::vector<ModConv> blocks_;
  ModConv to_planes_;
  Conv2d up0_, up1_;
};

/// Stacked camera vectors [B, 25]; zeros when `enabled` is false.
Tensor camera_tensor(std::span<const CameraParams> cams, bool enabled = true);

struct DiscriminatorConfig {
  int image_res = 32;
  int text_dim = 64;
  int width = 32;
  int feature_dim = 128;
};

/// Convolutional trunk with projection conditioning on [e | p].
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, Rng& rng);

  const DiscriminatorConfig& config() const { return cfg_; }
  /// x [B, 3, H, W], e [B, text_dim], p [B, 25] -> logits [B].
  Tensor operator()(const Tensor& x, const Tensor& e, const Tensor& p) const;
  /// Pooled trunk feature [B, feature_dim].
  Tensor trunk(const Tensor& x) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  DiscriminatorConfig cfg_;
  ParamSet params_;
  Conv2d c0_, c1_, c2_;
  Linear fc_;
  size_t out_w_ = 0, out_b_ = 0, proj_ = 0;
};

struct AlignmentConfig {
  int part_res = 32;
  int feature_dim = 64;  // d
  int text_dim = 64;
  int heads = 4;
  int n_tokens = 8;  // N part-level texts
  int n_attributes = 8;  // k
  int classifier_hidden = 64;
  int width = 16;
};

/// Fine-grained alignment module: part feature extractor, token projections,
/// and attribute classifier.
class AlignmentModule {
 public:
  AlignmentModule() = default;
  AlignmentModule(const AlignmentConfig& cfg, Rng& rng);

  const AlignmentConfig& config() const { return cfg_; }

  /// Part crops [M, 3, part_res, part_res] -> F [M, d].
  Tensor extract_part_features(const Tensor& crops) const;
  /// H [N, text_dim] -> K for head `head`, [N, d].
  Tensor project_tokens(const Tensor& h, int head) const;
  /// Aggregated features of all heads, [N, heads * d], -> probabilities [1, k].
  Tensor classify_attributes(const Tensor& f_agg) const;
  /// F [M, d] for one image -> concatenated per-head aggregation [N, heads * d].
  Tensor aggregate(const Tensor& f, const Tensor& h) const;
  /// Crops of several images, `counts[i]` consecutive crops per image -> probabilities [B, k].
  Tensor predict(const Tensor& crops, std::span<const int> counts, const Tensor& h) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  AlignmentConfig cfg_;
  ParamSet params_;
  Conv2d c0_, c1_, c2_;
  Linear fc_;
  std::vector<Linear> heads_;
  Linear cls0_, cls1_;
};

}  // namespace tg3d
