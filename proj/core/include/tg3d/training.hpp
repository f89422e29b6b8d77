#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tg3d/archive.hpp"
#include "tg3d/data.hpp"
#include "tg3d/encoders.hpp"
#include "tg3d/losses.hpp"
#include "tg3d/metrics.hpp"
#include "tg3d/networks.hpp"
#include "tg3d/parsing.hpp"

namespace tg3d {

struct TrainConfig {
  uint64_t seed = 0;
  int steps = 2000;
  int batch = 8;
  double lr_g = 0.0025;
  double lr_d = 0.002;
  double lr_align = 0.002;
  double lr_encoder = 0.0025;
  double r1_gamma = 1.0;
  double r1_step = 1e-3;  // largest per-pixel perturbation of the finite-difference penalty gradient
  double w_adv = 1.0;
  double w_cl = 1.0;
  double w_fg = 1.0;
  ContrastiveOptions contrastive;
  BceOptions bce;
  double blur_sigma0 = 1.0;
  int64_t blur_ramp_images = 20000;
  int res_start = 16;
  int res_end = 32;
  int64_t res_ramp_images = 50000;
  int holdout_period = 5;
  int checkpoint_every = 0;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  AlignmentConfig alignment;
  ImageEncoderConfig cl_encoder;
  EncoderConfig text;
  ParserConfig parser;
  PoseDistribution poses;
  JudgeConfig judge;

  TrainConfig();
  /// Copies shared sizes (text dimension, image resolution, attribute count) into every sub-config.
  void finalize();
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
  uint64_t hash() const;
};

/// Linear decay from blur_sigma0 to 0 over blur_ramp_images.
double blur_sigma(int64_t images_seen, const TrainConfig& cfg);
/// Linear ramp from res_start to res_end over res_ramp_images, rounded to a multiple of 4.
int render_res(int64_t images_seen, const TrainConfig& cfg);

struct StepLog {
  int64_t step = 0;
  double l_cl = 0.0;
  double l_fg = 0.0;       // phase 2, generated images
  double l_fg_real = 0.0;  // phase 1
  double l_fg_fake = 0.0;  // phase 1, detached generated images
  double d_loss = 0.0;
  double g_loss = 0.0;
  double r1 = 0.0;
  int res = 0;
  double blur = 0.0;

  nlohmann::json to_json() const;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything training mutates: networks, optimizers, counters, and the sampler state.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) = default;

  const TrainConfig& config() const { return cfg_; }
  Generator& generator() { return g_; }
  const Generator& generator() const { return g_; }
  Discriminator& discriminator() { return d_; }
  const Discriminator& discriminator() const { return d_; }
  AlignmentModule& alignment() { return c_; }
  const AlignmentModule& alignment() const { return c_; }
  ConvImageEncoder& cl_encoder() { return e_; }
  const ConvImageEncoder& cl_encoder() const { return e_; }
  const TextEncoder& text_encoder() const { return *text_; }
  const Judge& judge() const { return judge_; }
  void set_judge(Judge judge) { judge_ = std::move(judge); }
  /// Changes only cfg.steps, e.g. to extend a resumed run.
  void set_step_budget(int steps);
  /// Copies parameter values of `g` (same config) into the trained generator.
  void load_generator(const Generator& g);
  Rng& rng() { return rng_; }

  int64_t steps_done() const { return step_; }
  int64_t images_seen() const { return images_seen_; }
  int current_render_res() const { return render_res(images_seen_, cfg_); }

  /// One alternating update: D and the alignment module, then G and the L_CL encoder.
  StepLog step(const std::vector<TrainSample>& batch);

  /// Parameter views used by the optimizers.
  std::vector<NamedParam> g_params() const;
  std::vector<NamedParam> d_params() const;
  std::vector<NamedParam> c_params() const;
  std::vector<NamedParam> e_params() const;

  Archive to_archive() const;
  static Trainer from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  static Trainer load(const std::filesystem::path& path);

 private:
  void build_optimizers();
  Tensor crops(const Tensor& images) const;

  TrainConfig cfg_;
  std::unique_ptr<TextEncoder> text_;
  Generator g_;
  Discriminator d_;
  AlignmentModule c_;
  ConvImageEncoder e_;
  Judge judge_;
  std::unique_ptr<Adam> opt_g_, opt_d_, opt_c_, opt_e_;
  Tensor tokens_;  // part-level texts, [N, D]
  std::vector<Mask> regions_;
  Rng rng_;
  int64_t step_ = 0;
  int64_t images_seen_ = 0;
};

struct TrainRunOptions {
  std::filesystem::path out_dir;  // checkpoints and log; empty = in-memory only
  std::function<void(const StepLog&)> on_step;
  bool fit_judge = true;
};

/// Fits the judge on the held-out split (if not fitted), then runs steps until cfg.steps.
/// On a numerical failure the current state is written to out_dir/abort.ckpt before rethrowing.
void train(Trainer& trainer, const Dataset& data, const TrainRunOptions& opts = {});

/// Held-out/train split used by training and evaluation.
Split training_split(const Dataset& data, const TrainConfig& cfg);

}  // namespace tg3d
