#include "tg3d/networks.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

#include "tg3d/losses.hpp"

namespace tg3d {

namespace {
void require_batch(const Tensor& t, int batch, int cols, const char* what) {
  if (t.rank() != 2 || t.dim(0) != batch || t.dim(1) != cols) {
    throw std::invalid_argument(
        fmt::format("{}: expected [{}, {}], got {}", what, batch, cols, shape_str(t.shape())));
  }
}

// Sum of squared kernel taps, [out, in].
Tensor kernel_energy(const Tensor& w) {
  const int out = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
  return reshape(sum_last(reshape(square(w), {out * in, kk})), {out, in});
}
}  // namespace

// ---------------------------------------------------------------- modulated conv

ModConv ModConv::make(ParamSet& params, const std::string& name, int in, int out, int k, int w_dim, Rng& rng,
                      bool demodulate) {
  ModConv m;
  m.pad = k / 2;
  m.demodulate = demodulate;
  const double std = demodulate ? 1.0 : 1.0 / std::sqrt(static_cast<double>(in * k * k));
  m.weight = params.add_normal(name + ".weight", {out, in, k, k}, rng, std);
  m.bias = params.add_constant(name + ".bias", {out}, 0.0);
  m.affine = Linear::make(params, name + ".affine", w_dim, in, rng, 1.0, 1.0);
  return m;
}

Tensor ModConv::operator()(const ParamSet& params, const Tensor& x, const Tensor& w) const {
  const Tensor& weight = params[this->weight];
  Tensor style = affine(params, w);  // [B, in]
  Tensor y = conv2d(scale_channels(x, style), weight, pad);
  if (demodulate) {
    Tensor d = rsqrt(matmul(square(style), kernel_energy(weight), false, true) + 1e-8);
    y = scale_channels(y, d);
  }
  return add_channel_bias(y, params[bias]);
}

// ---------------------------------------------------------------- generator

Tensor camera_tensor(std::span<const CameraParams> cams, bool enabled) {
  std::vector<double> v(cams.size() * CameraParams::kDim, 0.0);
  if (enabled) {
    for (size_t i = 0; i < cams.size(); ++i) {
      const auto p = cams[i].to_vector();
      std::copy(p.begin(), p.end(), v.begin() + static_cast<std::ptrdiff_t>(i * CameraParams::kDim));
    }
  }
  return Tensor::from({static_cast<int>(cams.size()), CameraParams::kDim}, std::move(v));
}

Generator::Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.plane_res < 4 || (cfg.plane_res & (cfg.plane_res - 1)) != 0) {
    throw std::invalid_argument("generator plane resolution must be a power of two >= 4");
  }
  if (cfg.decoder.in_channels != cfg.plane_channels) {
    throw std::invalid_argument("decoder input channels must match plane channels");
  }
  if (cfg.decoder.feature_channels < 3) throw std::invalid_argument("decoder needs at least 3 feature channels");

  int in = cfg.z_dim + cfg.text_dim + CameraParams::kDim;
  for (int i = 0; i < cfg.mapping_layers; ++i) {
    mapping_.push_back(Linear::make(params_, fmt::format("mapping{}", i), in, cfg.w_dim, rng));
    in = cfg.w_dim;
  }
  const int c0 = cfg.base_channels;
  const_input_ = params_.add_normal("const", {c0, 4, 4}, rng, 1.0);
  auto channels_at = [&](int res) { return res >= 16 ? std::max(cfg.base_channels / 2, 8) : cfg.base_channels; };
  int ch = c0;
  blocks_.push_back(ModConv::make(params_, "block4", ch, ch, 3, cfg.w_dim, rng));
  for (int res = 8; res <= cfg.plane_res; res *= 2) {
    const int out = channels_at(res);
    blocks_.push_back(ModConv::make(params_, fmt::format("block{}", res), ch, out, 3, cfg.w_dim, rng));
    ch = out;
  }
  to_planes_ = ModConv::make(params_, "to_planes", ch, 3 * cfg.plane_channels, 1, cfg.w_dim, rng, false);

  const int f = cfg.decoder.feature_channels;
  up0_ = Conv2d::make(params_, "up0", f, cfg.upsampler_channels, 3, rng);
  up1_ = Conv2d::make(params_, "up1", cfg.upsampler_channels, 3, 3, rng, 0.1);

  decoder_ = TriPlaneDecoder(cfg.decoder, rng);
}

Tensor Generator::map_latent(const Tensor& z, const Tensor& e, const Tensor& p) const {
  const int b = z.dim(0);
  require_batch(z, b, cfg_.z_dim, "map_latent z");
  require_batch(e, b, cfg_.text_dim, "map_latent text embedding");
  require_batch(p, b, CameraParams::kDim, "map_latent camera");
  Tensor x = concat({z, e * std::sqrt(static_cast<double>(cfg_.text_dim)), p}, 1);
  for (size_t i = 0; i < mapping_.size(); ++i) {
    x = mapping_[i](params_, x);
    if (i + 1 < mapping_.size()) x = leaky_relu(x);
  }
  return x;
}

Tensor Generator::synthesize_planes(const Tensor& w) const {
  const int b = w.dim(0);
  require_batch(w, b, cfg_.w_dim, "synthesize_planes");
  const Tensor& c = params_[const_input_];
  Tensor x = reshape(repeat_rows(reshape(c, {static_cast<int>(c.size())}), b), {b, c.dim(0), 4, 4});
  int res = 4;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    if (i > 0) {
      res *= 2;
      x = upsample_nearest(x, res, res);
    }
    x = leaky_relu(blocks_[i](params_, x, w));
  }
  x = to_planes_(params_, x, w);
  return reshape(x, {b, 3, cfg_.plane_channels, cfg_.plane_res, cfg_.plane_res});
}

Tensor Generator::upsample(const RenderOutput& low) const {
  const int f = low.feature_image.dim(1), h = low.feature_image.dim(2);
  const int out = cfg_.image_res;
  Tensor x = concat({low.rgb_image, slice(low.feature_image, 1, 3, f - 3)}, 1);
  x = upsample_nearest(x, out, out);
  x = leaky_relu(up0_(params_, x));
  x = up1_(params_, x);
  Tensor rgb_up = h == out ? low.rgb_image : crop_resize(low.rgb_image, 0, 0, h, h, out, out);
  Tensor p = clamp(rgb_up, 1e-3, 1.0 - 1e-3);
  Tensor logit = log(p) - log((-p) + 1.0);
  return sigmoid(x + logit);
}

GeneratorOutput Generator::forward(const Tensor& z, const Tensor& e, std::span<const CameraParams> cams,
                                   std::span<const CameraParams> cond, int render_res, Rng* rng) const {
  if (static_cast<int>(cams.size()) != z.dim(0)) {
    throw std::invalid_argument(fmt::format("generator: {} cameras for batch {}", cams.size(), z.dim(0)));
  }
  if (cond.empty()) cond = cams;
  if (cond.size() != cams.size()) throw std::invalid_argument("generator: conditioning camera count mismatch");
  GeneratorOutput out;
  Tensor w = map_latent(z, e, camera_tensor(cond, cfg_.camera_conditioning));
  out.planes = synthesize_planes(w);
  RenderOptions opts = cfg_.render;
  opts.resolution = render_res;
  if (!rng) opts.stratified = false;  // deterministic bin midpoints
  out.low = render_batch(out.planes, decoder_, cams, opts, rng);
  out.image = upsample(out.low);
  return out;
}

GeneratorOutput Generator::generate(std::span<const double> z, const TextInput& text, const CameraParams& cam,
                                    const TextEncoder& encoder) const {
  if (static_cast<int>(z.size()) != cfg_.z_dim) {
    throw std::invalid_argument(fmt::format("generate: z has {} values, expected {}", z.size(), cfg_.z_dim));
  }
  const Embedding e = encoder.encode(text);
  return forward(Tensor::from({1, cfg_.z_dim}, {z.begin(), z.end()}), Tensor::from({1, e.dim()}, e.values),
                 std::span<const CameraParams>(&cam, 1), cfg_.render.resolution);
}

std::vector<NamedParam> Generator::named_parameters() const {
  auto out = prefixed(params_, "net.");
  append(out, prefixed(decoder_.params(), "decoder."));
  return out;
}

// ---------------------------------------------------------------- discriminator

Discriminator::Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.image_res % 8 != 0) throw std::invalid_argument("discriminator resolution must be a multiple of 8");
  const int w = cfg.width;
  c0_ = Conv2d::make(params_, "conv0", 3, w, 3, rng);
  c1_ = Conv2d::make(params_, "conv1", w, 2 * w, 3, rng);
  c2_ = Conv2d::make(params_, "conv2", 2 * w, 2 * w, 3, rng);
  const int flat = 2 * w * (cfg.image_res / 8) * (cfg.image_res / 8);
  fc_ = Linear::make(params_, "fc", flat, cfg.feature_dim, rng);
  out_w_ = params_.add_normal("out.weight", {cfg.feature_dim, 1}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim)));
  out_b_ = params_.add_constant("out.bias", {1}, 0.0);
  const int cond = cfg.text_dim + CameraParams::kDim;
  proj_ = params_.add_normal("proj.weight", {cond, cfg.feature_dim}, rng,
                             1.0 / std::sqrt(static_cast<double>(cond * cfg.feature_dim)));
}

Tensor Discriminator::trunk(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.image_res || x.dim(3) != cfg_.image_res) {
    throw std::invalid_argument(fmt::format("discriminator expects [B, 3, {}, {}], got {}", cfg_.image_res,
                                            cfg_.image_res, shape_str(x.shape())));
  }
  Tensor h = center_pixels(x);
  h = avg_pool2(leaky_relu(c0_(params_, h)));
  h = avg_pool2(leaky_relu(c1_(params_, h)));
  h = avg_pool2(leaky_relu(c2_(params_, h)));
  h = reshape(h, {x.dim(0), static_cast<int>(h.size() / x.dim(0))});
  return leaky_relu(fc_(params_, h));
}

Tensor Discriminator::operator()(const Tensor& x, const Tensor& e, const Tensor& p) const {
  const int b = x.dim(0);
  require_batch(e, b, cfg_.text_dim, "discriminator text embedding");
  require_batch(p, b, CameraParams::kDim, "discriminator camera");
  Tensor h = trunk(x);
  Tensor c = concat({e * std::sqrt(static_cast<double>(cfg_.text_dim)), p}, 1);
  Tensor base = reshape(add_bias(matmul(h, params_[out_w_]), params_[out_b_]), {b});
  Tensor projected = sum_last(h * matmul(c, params_[proj_]));
  return base + projected;
}

// ---------------------------------------------------------------- alignment

AlignmentModule::AlignmentModule(const AlignmentConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.part_res % 8 != 0) throw std::invalid_argument("part resolution must be a multiple of 8");
  if (cfg.heads < 1) throw std::invalid_argument("alignment needs at least one head");
  const int w = cfg.width;
  c0_ = Conv2d::make(params_, "delta.conv0", 3, w, 3, rng);
  c1_ = Conv2d::make(params_, "delta.conv1", w, 2 * w, 3, rng);
  c2_ = Conv2d::make(params_, "delta.conv2", 2 * w, 2 * w, 3, rng);
  const int flat = 2 * w * (cfg.part_res / 8) * (cfg.part_res / 8);
  fc_ = Linear::make(params_, "delta.fc", flat, cfg.feature_dim, rng);
  for (int h = 0; h < cfg.heads; ++h) {
    heads_.push_back(Linear::make(params_, fmt::format("lk.head{}", h), cfg.text_dim, cfg.feature_dim, rng));
  }
  cls0_ = Linear::make(params_, "gamma.fc0", cfg.n_tokens * cfg.heads * cfg.feature_dim, cfg.classifier_hidden, rng);
  cls1_ = Linear::make(params_, "gamma.fc1", cfg.classifier_hidden, cfg.n_attributes, rng);
}

Tensor AlignmentModule::extract_part_features(const Tensor& crops) const {
  if (crops.rank() != 4 || crops.dim(0) < 1) throw std::invalid_argument("no parts");
  if (crops.dim(1) != 3 || crops.dim(2) != cfg_.part_res || crops.dim(3) != cfg_.part_res) {
    throw std::invalid_argument(fmt::format("part crops must be [M, 3, {}, {}], got {}", cfg_.part_res,
                                            cfg_.part_res, shape_str(crops.shape())));
  }
  Tensor x = center_pixels(crops);
  x = avg_pool2(leaky_relu(c0_(params_, x)));
  x = avg_pool2(leaky_relu(c1_(params_, x)));
  x = avg_pool2(leaky_relu(c2_(params_, x)));
  x = reshape(x, {crops.dim(0), static_cast<int>(x.size() / crops.dim(0))});
  return fc_(params_, x);
}

Tensor AlignmentModule::project_tokens(const Tensor& h, int head) const {
  if (head < 0 || head >= cfg_.heads) throw std::out_of_range("project_tokens: head index");
  return heads_[static_cast<size_t>(head)](params_, h);
}

Tensor AlignmentModule::aggregate(const Tensor& f, const Tensor& h) const {
  std::vector<Tensor> per_head;
  for (int i = 0; i < cfg_.heads; ++i) per_head.push_back(score_map_aggregate(f, project_tokens(h, i)).aggregated);
  return concat(per_head, 1);
}

Tensor AlignmentModule::classify_attributes(const Tensor& f_agg) const {
  const int flat = cfg_.n_tokens * cfg_.heads * cfg_.feature_dim;
  Tensor x = f_agg;
  if (x.rank() == 2 && x.dim(0) == cfg_.n_tokens && x.dim(1) == cfg_.heads * cfg_.feature_dim) x = reshape(x, {1, flat});
  if (x.rank() != 2 || x.dim(1) != flat) {
    throw std::invalid_argument(fmt::format("classify_attributes: expected [B, {}], got {}", flat, shape_str(x.shape())));
  }
  return sigmoid(cls1_(params_, leaky_relu(cls0_(params_, x))));
}

Tensor AlignmentModule::predict(const Tensor& crops, std::span<const int> counts, const Tensor& h) const {
  if (counts.empty()) throw std::invalid_argument("no parts");
  int total = 0;
  for (int c : counts) {
    if (c < 1) throw std::invalid_argument("no parts");
    total += c;
  }
  if (total != crops.dim(0)) throw std::invalid_argument("predict: part counts do not match the crop batch");
  Tensor f = extract_part_features(crops);
  std::vector<Tensor> rows;
  int start = 0;
  for (int c : counts) {
    rows.push_back(reshape(aggregate(slice(f, 0, start, c), h), {1, cfg_.n_tokens * cfg_.heads * cfg_.feature_dim}));
    start += c;
  }
  return classify_attributes(concat(rows, 0));
}

}  // namespace tg3d
