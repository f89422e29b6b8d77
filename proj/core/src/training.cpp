#include "tg3d/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tg3d {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json config_json(const TrainConfig& c) {
  const auto& g = c.generator;
  return {
      {"seed", c.seed},
      {"steps", c.steps},
      {"batch", c.batch},
      {"lr_g", c.lr_g},
      {"lr_d", c.lr_d},
      {"lr_align", c.lr_align},
      {"lr_encoder", c.lr_encoder},
      {"r1_gamma", c.r1_gamma},
      {"r1_step", c.r1_step},
      {"weights", {{"adv", c.w_adv}, {"cl", c.w_cl}, {"fg", c.w_fg}}},
      {"contrastive", {{"tau", c.contrastive.tau}, {"standard_infonce", c.contrastive.standard_infonce}}},
      {"bce", {{"eps", c.bce.eps}, {"positive_only", c.bce.positive_only}}},
      {"blur", {{"sigma0", c.blur_sigma0}, {"ramp_images", c.blur_ramp_images}}},
      {"render_ramp", {{"start", c.res_start}, {"end", c.res_end}, {"ramp_images", c.res_ramp_images}}},
      {"holdout_period", c.holdout_period},
      {"checkpoint_every", c.checkpoint_every},
      {"generator",
       {{"z_dim", g.z_dim},
        {"w_dim", g.w_dim},
        {"mapping_layers", g.mapping_layers},
        {"base_channels", g.base_channels},
        {"plane_channels", g.plane_channels},
        {"plane_res", g.plane_res},
        {"image_res", g.image_res},
        {"upsampler_channels", g.upsampler_channels},
        {"camera_conditioning", g.camera_conditioning},
        {"decoder", {{"hidden", g.decoder.hidden}, {"feature_channels", g.decoder.feature_channels}}},
        {"render",
         {{"n_samples", g.render.n_samples},
          {"near", g.render.near},
          {"far", g.render.far},
          {"stratified", g.render.stratified},
          {"background", vec3_json(g.render.background)}}}}},
      {"discriminator", {{"width", c.discriminator.width}, {"feature_dim", c.discriminator.feature_dim}}},
      {"alignment",
       {{"part_res", c.alignment.part_res},
        {"feature_dim", c.alignment.feature_dim},
        {"heads", c.alignment.heads},
        {"classifier_hidden", c.alignment.classifier_hidden},
        {"width", c.alignment.width}}},
      {"cl_encoder", {{"feature_dim", c.cl_encoder.feature_dim}, {"width", c.cl_encoder.width}}},
      {"encoder", {{"kind", c.text.kind}, {"external_path", c.text.external_path}, {"dim", c.text.dim}, {"seed", c.text.seed}}},
      {"parser",
       {{"grid", c.parser.grid},
        {"min_foreground", c.parser.min_foreground},
        {"foreground_tol", c.parser.foreground_tol}}},
      {"poses",
       {{"yaw_range", c.poses.yaw_range},
        {"pitch_range", c.poses.pitch_range},
        {"radius", c.poses.radius},
        {"focal", c.poses.focal}}},
      {"judge",
       {{"steps", c.judge.steps},
        {"batch", c.judge.batch},
        {"lr", c.judge.lr},
        {"tau", c.judge.tau},
        {"seed", c.judge.seed},
        {"feature_dim", c.judge.encoder.feature_dim},
        {"width", c.judge.encoder.width}}},
  };
}

void reject_unknown(const json& given, const json& known, const std::string& path) {
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw std::invalid_argument(fmt::format("unknown config key '{}{}'", path, key));
    if (value.is_object() && known[key].is_object()) reject_unknown(value, known[key], path + key + ".");
  }
}

}  // namespace

TrainConfig::TrainConfig() {
  generator.render.stratified = true;
  finalize();
}

void TrainConfig::finalize() {
  const int d = text.dim;
  generator.text_dim = d;
  generator.decoder.in_channels = generator.plane_channels;
  generator.render.resolution = res_start;
  discriminator.text_dim = d;
  discriminator.image_res = generator.image_res;
  alignment.text_dim = d;
  alignment.n_tokens = attribute_count();
  alignment.n_attributes = attribute_count();
  cl_encoder.dim = d;
  cl_encoder.image_res = generator.image_res;
  judge.encoder.dim = d;
  judge.encoder.image_res = generator.image_res;
  judge.tau = judge.tau > 0 ? judge.tau : contrastive.tau;
  judge.holdout_period = holdout_period;
  parser.background = generator.render.background;
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(fmt::format("config: {} must be positive", name));
  };
  if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
  positive(batch, "batch");
  // a zero learning rate freezes that network
  if (lr_g < 0.0 || lr_d < 0.0 || lr_align < 0.0 || lr_encoder < 0.0) {
    throw std::invalid_argument("config: learning rates must be nonnegative");
  }
  positive(contrastive.tau, "contrastive.tau");
  positive(r1_step, "r1_step");
  if (r1_gamma < 0.0 || w_adv < 0.0 || w_cl < 0.0 || w_fg < 0.0) {
    throw std::invalid_argument("config: loss weights must be nonnegative");
  }
  if (blur_sigma0 < 0.0 || blur_ramp_images < 0 || res_ramp_images < 0) {
    throw std::invalid_argument("config: schedules must be nonnegative");
  }
  positive(res_start, "render_ramp.start");
  if (res_start > res_end) throw std::invalid_argument("config: render_ramp.start must not exceed render_ramp.end");
  if (res_end > generator.image_res) throw std::invalid_argument("config: render_ramp.end exceeds the image resolution");
  if (holdout_period < 2) throw std::invalid_argument("config: holdout_period must be >= 2");
}

json TrainConfig::to_json() const { return config_json(*this); }

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  json full = config_json(c);
  reject_unknown(j, full, "");
  full.merge_patch(j);
  c.seed = full["seed"].get<uint64_t>();
  c.steps = full["steps"].get<int>();
  c.batch = full["batch"].get<int>();
  c.lr_g = full["lr_g"].get<double>();
  c.lr_d = full["lr_d"].get<double>();
  c.lr_align = full["lr_align"].get<double>();
  c.lr_encoder = full["lr_encoder"].get<double>();
  c.r1_gamma = full["r1_gamma"].get<double>();
  c.r1_step = full["r1_step"].get<double>();
  c.w_adv = full["weights"]["adv"].get<double>();
  c.w_cl = full["weights"]["cl"].get<double>();
  c.w_fg = full["weights"]["fg"].get<double>();
  c.contrastive.tau = full["contrastive"]["tau"].get<double>();
  c.contrastive.standard_infonce = full["contrastive"]["standard_infonce"].get<bool>();
  c.bce.eps = full["bce"]["eps"].get<double>();
  c.bce.positive_only = full["bce"]["positive_only"].get<bool>();
  c.blur_sigma0 = full["blur"]["sigma0"].get<double>();
  c.blur_ramp_images = full["blur"]["ramp_images"].get<int64_t>();
  c.res_start = full["render_ramp"]["start"].get<int>();
  c.res_end = full["render_ramp"]["end"].get<int>();
  c.res_ramp_images = full["render_ramp"]["ramp_images"].get<int64_t>();
  c.holdout_period = full["holdout_period"].get<int>();
  c.checkpoint_every = full["checkpoint_every"].get<int>();
  const json& g = full["generator"];
  c.generator.z_dim = g["z_dim"].get<int>();
  c.generator.w_dim = g["w_dim"].get<int>();
  c.generator.mapping_layers = g["mapping_layers"].get<int>();
  c.generator.base_channels = g["base_channels"].get<int>();
  c.generator.plane_channels = g["plane_channels"].get<int>();
  c.generator.plane_res = g["plane_res"].get<int>();
  c.generator.image_res = g["image_res"].get<int>();
  c.generator.upsampler_channels = g["upsampler_channels"].get<int>();
  c.generator.camera_conditioning = g["camera_conditioning"].get<bool>();
  c.generator.decoder.hidden = g["decoder"]["hidden"].get<int>();
  c.generator.decoder.feature_channels = g["decoder"]["feature_channels"].get<int>();
  c.generator.render.n_samples = g["render"]["n_samples"].get<int>();
  c.generator.render.near = g["render"]["near"].get<double>();
  c.generator.render.far = g["render"]["far"].get<double>();
  c.generator.render.stratified = g["render"]["stratified"].get<bool>();
  c.generator.render.background = g["render"]["background"].get<Vec3>();
  c.discriminator.width = full["discriminator"]["width"].get<int>();
  c.discriminator.feature_dim = full["discriminator"]["feature_dim"].get<int>();
  const json& a = full["alignment"];
  c.alignment.part_res = a["part_res"].get<int>();
  c.alignment.feature_dim = a["feature_dim"].get<int>();
  c.alignment.heads = a["heads"].get<int>();
  c.alignment.classifier_hidden = a["classifier_hidden"].get<int>();
  c.alignment.width = a["width"].get<int>();
  c.cl_encoder.feature_dim = full["cl_encoder"]["feature_dim"].get<int>();
  c.cl_encoder.width = full["cl_encoder"]["width"].get<int>();
  c.text.kind = full["encoder"]["kind"].get<std::string>();
  c.text.external_path = full["encoder"]["external_path"].get<std::string>();
  c.text.dim = full["encoder"]["dim"].get<int>();
  c.text.seed = full["encoder"]["seed"].get<uint64_t>();
  c.parser.grid = full["parser"]["grid"].get<int>();
  c.parser.min_foreground = full["parser"]["min_foreground"].get<double>();
  c.parser.foreground_tol = full["parser"]["foreground_tol"].get<double>();
  c.poses.yaw_range = full["poses"]["yaw_range"].get<double>();
  c.poses.pitch_range = full["poses"]["pitch_range"].get<double>();
  c.poses.radius = full["poses"]["radius"].get<double>();
  c.poses.focal = full["poses"]["focal"].get<double>();
  const json& jd = full["judge"];
  c.judge.steps = jd["steps"].get<int>();
  c.judge.batch = jd["batch"].get<int>();
  c.judge.lr = jd["lr"].get<double>();
  c.judge.tau = jd["tau"].get<double>();
  c.judge.seed = jd["seed"].get<uint64_t>();
  c.judge.encoder.feature_dim = jd["feature_dim"].get<int>();
  c.judge.encoder.width = jd["width"].get<int>();
  c.finalize();
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open config '{}'", path.string()));
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("config '{}': {}", path.string(), e.what()));
  }
}

uint64_t TrainConfig::hash() const { return fnv1a(to_json().dump()); }

// ---------------------------------------------------------------- schedules

double blur_sigma(int64_t images_seen, const TrainConfig& cfg) {
  if (images_seen < 0) throw std::invalid_argument("blur_sigma: images_seen must be >= 0");
  if (cfg.blur_ramp_images <= 0 || images_seen >= cfg.blur_ramp_images) return 0.0;
  return cfg.blur_sigma0 * (1.0 - static_cast<double>(images_seen) / static_cast<double>(cfg.blur_ramp_images));
}

int render_res(int64_t images_seen, const TrainConfig& cfg) {
  if (images_seen < 0) throw std::invalid_argument("render_res: images_seen must be >= 0");
  if (cfg.res_ramp_images <= 0 || images_seen >= cfg.res_ramp_images) return cfg.res_end;
  const double f = static_cast<double>(images_seen) / static_cast<double>(cfg.res_ramp_images);
  const double r = cfg.res_start + f * (cfg.res_end - cfg.res_start);
  const int rounded = static_cast<int>(std::lround(r / 4.0)) * 4;
  return std::clamp(rounded, cfg.res_start, cfg.res_end);
}

json StepLog::to_json() const {
  return {{"step", step},       {"l_cl", l_cl},   {"l_fg", l_fg}, {"l_fg_real", l_fg_real}, {"l_fg_fake", l_fg_fake},
          {"d_loss", d_loss},   {"g_loss", g_loss}, {"r1", r1},   {"res", res},             {"blur", blur}};
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.finalize();
  cfg_.validate();
  text_ = make_text_encoder(cfg_.text);
  if (text_->dim() != cfg_.text.dim) {
    throw std::invalid_argument(fmt::format("text encoder dimension {} differs from config {}", text_->dim(), cfg_.text.dim));
  }
  Rng init(cfg_.seed ^ 0x5eedULL);
  g_ = Generator(cfg_.generator, init);
  d_ = Discriminator(cfg_.discriminator, init);
  c_ = AlignmentModule(cfg_.alignment, init);
  e_ = ConvImageEncoder(cfg_.cl_encoder, init);
  std::vector<TextInput> names(attribute_names().begin(), attribute_names().end());
  tokens_ = text_->encode_batch(names);
  regions_ = region_masks(cfg_.generator.image_res, cfg_.generator.image_res, cfg_.parser.grid);
  build_optimizers();
}

std::vector<NamedParam> Trainer::g_params() const {
  auto out = g_.named_parameters();
  for (auto& p : out) p.name = "G." + p.name;
  return out;
}
std::vector<NamedParam> Trainer::d_params() const { return prefixed(d_.params(), "D."); }
std::vector<NamedParam> Trainer::c_params() const { return prefixed(c_.params(), "C."); }
std::vector<NamedParam> Trainer::e_params() const { return prefixed(e_.params(), "E."); }

void Trainer::set_step_budget(int steps) {
  if (steps < 0) throw std::invalid_argument("step budget must be >= 0");
  cfg_.steps = steps;
}

void Trainer::load_generator(const Generator& g) {
  const auto src = g.named_parameters();
  auto dst = g_.named_parameters();
  if (src.size() != dst.size()) throw std::invalid_argument("load_generator: parameter count mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw std::invalid_argument(fmt::format("load_generator: mismatch at '{}'", src[i].name));
    }
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
  }
}

void Trainer::build_optimizers() {
  opt_g_ = std::make_unique<Adam>(g_params(), AdamOptions{cfg_.lr_g});
  opt_d_ = std::make_unique<Adam>(d_params(), AdamOptions{cfg_.lr_d});
  opt_c_ = std::make_unique<Adam>(c_params(), AdamOptions{cfg_.lr_align});
  opt_e_ = std::make_unique<Adam>(e_params(), AdamOptions{cfg_.lr_encoder});
}

Tensor Trainer::crops(const Tensor& images) const {
  std::vector<Tensor> all;
  for (int b = 0; b < images.dim(0); ++b) all.push_back(crop_parts(images, b, regions_, cfg_.alignment.part_res));
  return concat(all, 0);
}

namespace {
void check_finite(double v, const char* what, int64_t step) {
  if (!std::isfinite(v)) throw NumericalError(fmt::format("non-finite {} at step {}", what, step));
}

Tensor maybe_blur(const Tensor& x, double sigma) { return sigma > 1e-3 ? gaussian_blur(x, sigma) : x; }
}  // namespace

StepLog Trainer::step(const std::vector<TrainSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("train step needs a nonempty batch");
  const int b = static_cast<int>(batch.size());
  StepLog log;
  log.step = step_;
  log.res = render_res(images_seen_, cfg_);
  log.blur = blur_sigma(images_seen_, cfg_);

  std::vector<double> z, labels;
  std::vector<TextInput> texts;
  std::vector<CameraParams> cams;
  std::vector<Image> reals;
  std::vector<int> labeled;
  for (int i = 0; i < b; ++i) {
    const auto& s = batch[static_cast<size_t>(i)];
    if (static_cast<int>(s.z.size()) != cfg_.generator.z_dim) throw std::invalid_argument("train step: z dimension mismatch");
    z.insert(z.end(), s.z.begin(), s.z.end());
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    texts.push_back(s.text);
    cams.push_back(s.camera);
    reals.push_back(*s.image);
    if (!s.text.tokens.empty()) labeled.push_back(i);
  }
  const Tensor zt = Tensor::from({b, cfg_.generator.z_dim}, z);
  const Tensor e = embed_captions(texts, *text_);
  const Tensor p = camera_tensor(cams);
  const Tensor x_real = to_tensor(reals);
  const std::vector<int> counts(static_cast<size_t>(b), static_cast<int>(regions_.size()));

  // Phase 1: discriminator and alignment module.
  Tensor fake_detached;
  {
    NoGradGuard no_grad;
    fake_detached = g_.forward(zt, e, cams, log.res, &rng_).image;
  }
  opt_d_->zero_grad();
  opt_c_->zero_grad();
  const Tensor xr = maybe_blur(x_real, log.blur);
  const Tensor xf = maybe_blur(fake_detached, log.blur);
  Tensor real_logits = d_(xr, e, p);
  Tensor fake_logits = d_(xf, e, p);
  Tensor fg_real = fine_grained_loss(c_.predict(crops(x_real), counts, tokens_), labels, cfg_.bce);
  Tensor fg_fake = fine_grained_loss(c_.predict(crops(fake_detached), counts, tokens_), labels, cfg_.bce);

  // R1 at the real images: gradient w.r.t. the input, then the parameter gradient of
  // gamma * mean |g|^2 as a central difference of parameter gradients along g.
  std::vector<double> grad_x;
  {
    d_.params().set_trainable(false);
    Tensor leaf = Tensor::parameter(xr.shape(), {xr.data().begin(), xr.data().end()});
    sum(d_(leaf, e, p)).backward();
    grad_x.assign(leaf.grad().begin(), leaf.grad().end());
    d_.params().set_trainable(true);
  }
  double gmax = 0.0, r1 = 0.0;
  for (double g : grad_x) {
    gmax = std::max(gmax, std::abs(g));
    r1 += g * g;
  }
  r1 /= b;
  log.r1 = r1;
  check_finite(r1, "r1", step_);

  GanLosses gl = gan_losses(real_logits, fake_logits, Tensor::scalar(r1), cfg_.r1_gamma);
  log.d_loss = gl.d_loss.item();
  log.l_fg_real = fg_real.item();
  log.l_fg_fake = fg_fake.item();
  check_finite(log.d_loss, "d_loss", step_);
  check_finite(log.l_fg_real + log.l_fg_fake, "l_fg", step_);
  Tensor loss1 = gl.d_loss * cfg_.w_adv + (fg_real + fg_fake) * cfg_.w_fg;
  loss1.backward();
  if (cfg_.r1_gamma > 0.0 && cfg_.w_adv > 0.0 && gmax > 0.0) {
    const double eps = cfg_.r1_step / gmax;
    std::vector<double> xp(grad_x.size()), xm(grad_x.size());
    for (size_t i = 0; i < grad_x.size(); ++i) {
      xp[i] = xr.at(static_cast<int64_t>(i)) + eps * grad_x[i];
      xm[i] = xr.at(static_cast<int64_t>(i)) - eps * grad_x[i];
    }
    Tensor diff = sum(d_(Tensor::from(xr.shape(), xp), e, p)) - sum(d_(Tensor::from(xr.shape(), xm), e, p));
    (diff * (cfg_.w_adv * cfg_.r1_gamma / (b * eps))).backward();
  }
  opt_d_->step();
  opt_c_->step();

  // Phase 2: generator and the L_CL image encoder, with D and C held fixed.
  opt_g_->zero_grad();
  opt_e_->zero_grad();
  d_.params().set_trainable(false);
  c_.params().set_trainable(false);
  GeneratorOutput out = g_.forward(zt, e, cams, log.res, &rng_);
  Tensor g_fake_logits = d_(maybe_blur(out.image, log.blur), e, p);
  Tensor g_loss = gan_losses(Tensor(), g_fake_logits, Tensor(), 0.0).g_loss;
  Tensor fg = fine_grained_loss(c_.predict(crops(out.image), counts, tokens_), labels, cfg_.bce);
  Tensor loss2 = g_loss * cfg_.w_adv + fg * cfg_.w_fg;
  if (!labeled.empty() && cfg_.w_cl > 0.0) {
    Tensor img_emb = e_.encode(out.image);
    Tensor te = e, ie = img_emb;
    if (static_cast<int>(labeled.size()) != b) {
      std::vector<Tensor> trows, irows;
      for (int i : labeled) {
        trows.push_back(slice(e, 0, i, 1));
        irows.push_back(slice(img_emb, 0, i, 1));
      }
      te = concat(trows, 0);
      ie = concat(irows, 0);
    }
    Tensor l_cl = contrastive_loss(te, ie, cfg_.contrastive);
    log.l_cl = l_cl.item();
    loss2 = loss2 + l_cl * cfg_.w_cl;
  }
  log.g_loss = g_loss.item();
  log.l_fg = fg.item();
  check_finite(loss2.item(), "generator loss", step_);
  loss2.backward();
  d_.params().set_trainable(true);
  c_.params().set_trainable(true);
  opt_g_->step();
  opt_e_->step();

  ++step_;
  images_seen_ += b;
  return log;
}

// ---------------------------------------------------------------- checkpoints

namespace {
json rng_json(const Rng& r) {
  const auto s = r.state();
  return json::array({s[0], s[1], s[2], s[3]});
}
}  // namespace

Archive Trainer::to_archive() const {
  Archive a;
  a.meta["format"] = "tg3d-checkpoint";
  a.meta["config"] = cfg_.to_json();
  a.meta["config_hash"] = fmt::format("{:016x}", cfg_.hash());
  a.meta["step"] = step_;
  a.meta["images_seen"] = images_seen_;
  a.meta["rng"] = rng_json(rng_);
  a.meta["optimizer_steps"] = {opt_g_->steps(), opt_d_->steps(), opt_c_->steps(), opt_e_->steps()};
  a.add(g_params(), "");
  a.add(d_params(), "");
  a.add(c_params(), "");
  a.add(e_params(), "");
  a.add(opt_g_->state(), "opt.");
  a.add(opt_d_->state(), "opt.");
  a.add(opt_c_->state(), "opt.");
  a.add(opt_e_->state(), "opt.");
  if (judge_.fitted()) judge_.save(a, "judge.");
  return a;
}

Trainer Trainer::from_archive(const Archive& a) {
  if (a.meta.value("format", "") != "tg3d-checkpoint") throw std::runtime_error("not a tg3d checkpoint");
  Trainer t(TrainConfig::from_json(a.meta.at("config")));
  const auto& c = a.meta.at("config_hash");
  if (c.get<std::string>() != fmt::format("{:016x}", t.cfg_.hash())) {
    throw std::runtime_error("checkpoint config hash does not match its config");
  }
  auto load_into = [&](const std::vector<NamedParam>& dst) {
    std::vector<NamedParam> src;
    for (const auto& p : dst) {
      auto it = std::find_if(a.arrays.begin(), a.arrays.end(), [&](const NamedParam& q) { return q.name == p.name; });
      if (it == a.arrays.end()) throw std::runtime_error(fmt::format("checkpoint is missing '{}'", p.name));
      if (it->tensor.shape() != p.tensor.shape()) throw std::runtime_error(fmt::format("checkpoint shape mismatch for '{}'", p.name));
      auto v = it->tensor.data();
      Tensor dst_t = p.tensor;
      std::copy(v.begin(), v.end(), dst_t.mutable_data().begin());
    }
  };
  load_into(t.g_params());
  load_into(t.d_params());
  load_into(t.c_params());
  load_into(t.e_params());
  const auto steps = a.meta.at("optimizer_steps").get<std::vector<int64_t>>();
  const auto opt = a.with_prefix("opt.");
  t.opt_g_->load_state(opt, steps.at(0));
  t.opt_d_->load_state(opt, steps.at(1));
  t.opt_c_->load_state(opt, steps.at(2));
  t.opt_e_->load_state(opt, steps.at(3));
  t.step_ = a.meta.at("step").get<int64_t>();
  t.images_seen_ = a.meta.at("images_seen").get<int64_t>();
  const auto s = a.meta.at("rng").get<std::vector<uint64_t>>();
  t.rng_.set_state({s.at(0), s.at(1), s.at(2), s.at(3)});
  if (a.meta.contains("judge.")) t.judge_ = Judge::load(a, "judge.");
  return t;
}

void Trainer::save(const fs::path& path) const { write_archive(path, to_archive()); }

Trainer Trainer::load(const fs::path& path) { return from_archive(read_archive(path)); }

// ---------------------------------------------------------------- loop

Split training_split(const Dataset& data, const TrainConfig& cfg) { return split_records(data.size(), cfg.holdout_period); }

void train(Trainer& trainer, const Dataset& data, const TrainRunOptions& opts) {
  const TrainConfig& cfg = trainer.config();
  const Split split = training_split(data, cfg);
  if (split.train.empty()) throw std::invalid_argument("training split is empty");
  if (opts.fit_judge && !trainer.judge().fitted()) {
    trainer.set_judge(Judge::fit(data, split.held_out, trainer.text_encoder(), cfg.judge));
  }
  std::ofstream log_file;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    log_file.open(opts.out_dir / "train_log.jsonl", trainer.steps_done() == 0 ? std::ios::trunc : std::ios::app);
    if (!log_file) throw std::runtime_error(fmt::format("cannot write training log in '{}'", opts.out_dir.string()));
  }
  while (trainer.steps_done() < cfg.steps) {
    StepLog log;
    try {
      const auto batch = sample_batch(data, cfg.batch, cfg.generator.z_dim, trainer.rng(), split.train);
      log = trainer.step(batch);
    } catch (const NumericalError&) {
      if (!opts.out_dir.empty()) trainer.save(opts.out_dir / "abort.ckpt");
      throw;
    }
    if (log_file) log_file << log.to_json().dump() << '\n' << std::flush;
    if (opts.on_step) opts.on_step(log);
    if (!opts.out_dir.empty() && cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0) {
      trainer.save(opts.out_dir / fmt::format("step{:06d}.ckpt", trainer.steps_done()));
    }
  }
  if (!opts.out_dir.empty()) trainer.save(opts.out_dir / "final.ckpt");
}

}  // namespace tg3d
