#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tg3d/archive.hpp"
#include "tg3d/data.hpp"
#include "tg3d/encoders.hpp"
#include "tg3d/networks.hpp"

namespace tg3d {

/// max(100 * cos(image, text), 0).
double clip_score(const Embedding& image, const Embedding& text);
double clip_score(const Image& x, const TextInput& s, const TextEncoder& text_encoder, const ImageEncoder& image_encoder);

/// Mean pairwise cosine of identity embeddings over all unordered pairs of views.
double mvic(std::span<const Image> views, const IdentityEncoder& identity);
/// Renders one identity (z, text) from every pose, conditioned on `cond`.
double mvic(const Generator& g, std::span<const double> z, const TextInput& s, std::span<const CameraParams> poses,
            const CameraParams& cond, const TextEncoder& text_encoder, const IdentityEncoder& identity);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with eps * I added to both covariances.
double frechet_distance(std::span<const double> mu_a, std::span<const double> cov_a, std::span<const double> mu_b,
                        std::span<const double> cov_b, int dim, double eps = 1e-6);
/// Sample mean and (n - 1)-normalized covariance of rows of a [n, d] tensor.
void feature_stats(const Tensor& feats, std::vector<double>& mean, std::vector<double>& cov);
double fid(const Tensor& feats_a, const Tensor& feats_b, double eps = 1e-6);

struct JudgeConfig {
  int steps = 400;
  int batch = 32;
  double lr = 0.002;
  double tau = 0.07;
  int holdout_period = 5;
  uint64_t seed = 7;
  ImageEncoderConfig encoder;
};

/// Frozen evaluation models fitted on held-out real images: a CLIP-like image
/// encoder aligned to caption embeddings and a linear attribute probe on its features.
class Judge {
 public:
  Judge() = default;

  static Judge fit(const Dataset& data, const std::vector<size_t>& indices, const TextEncoder& text_encoder,
                   const JudgeConfig& cfg, std::vector<double>* losses = nullptr);

  const ConvImageEncoder& image_encoder() const { return encoder_; }
  /// Attribute probabilities [B, k].
  Tensor probe(const Tensor& images) const;
  bool fitted() const { return fitted_; }

  void save(Archive& archive, const std::string& prefix) const;
  static Judge load(const Archive& archive, const std::string& prefix);

 private:
  void init(const ImageEncoderConfig& enc, int attributes, Rng& rng);

  ConvImageEncoder encoder_;
  ParamSet probe_params_;
  Linear probe_;
  bool fitted_ = false;
};

struct EvalOptions {
  int n_samples = 200;
  int mvic_identities = 8;
  int mvic_views = 8;
  uint64_t seed = 0;
};

struct MetricsReport {
  double mvic_mean = 0.0;
  double clip_score_mean = 0.0;
  double clip_score_mismatched = 0.0;
  double fid = 0.0;
  double attribute_accuracy = 0.0;
  double label_prior_baseline = 0.0;
  double probe_real_accuracy = 0.0;
  std::vector<double> per_attribute_accuracy;
  int n_samples = 0;

  nlohmann::json to_json() const;
};

/// JSON schema of MetricsReport::to_json().
const nlohmann::json& metrics_report_schema();
/// Returns an empty string when `report` validates, otherwise the first problem.
std::string validate_metrics_report(const nlohmann::json& report);

/// Generates one image per held-out record (its first caption and camera) and scores it.
MetricsReport evaluate_generator(const Generator& g, int render_res, const Judge& judge, const Dataset& data,
                                 const std::vector<size_t>& held_out, const TextEncoder& text_encoder,
                                 const IdentityEncoder& identity, const PoseDistribution& poses,
                                 const EvalOptions& opts);

/// Text embeddings of samples as a constant [B, D] tensor; empty captions map to zero rows.
Tensor embed_captions(std::span<const TextInput> texts, const TextEncoder& encoder);

}  // namespace tg3d
