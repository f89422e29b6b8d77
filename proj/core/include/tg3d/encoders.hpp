#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tg3d/image.hpp"
#include "tg3d/layers.hpp"
#include "tg3d/params.hpp"

namespace tg3d {

/// Unit-norm vector shared by the text, image, and identity encoders.
struct Embedding {
  std::vector<double> values;

  int dim() const { return static_cast<int>(values.size()); }
  double norm() const;
};

double cosine(std::span<const double> a, std::span<const double> b);
inline double cosine(const Embedding& a, const Embedding& b) { return cosine(a.values, b.values); }

/// Lowercased words with punctuation stripped; any non-alphanumeric byte separates words.
std::vector<std::string> tokenize(std::string_view text);

struct TextInput {
  std::string raw;
  std::vector<std::string> tokens;

  TextInput() = default;
  TextInput(std::string text);  // NOLINT(google-explicit-constructor)
  TextInput(const char* text) : TextInput(std::string(text)) {}  // NOLINT
};

struct EncoderConfig {
  std::string kind = "toy";  // toy | external
  std::string external_path;
  int dim = 64;
  uint64_t seed = 0;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  /// Throws std::invalid_argument("empty text") when there is nothing to encode.
  virtual Embedding encode(const TextInput& text) const = 0;

  /// Rows of unit embeddings, [n, dim], as a constant tensor.
  Tensor encode_batch(std::span<const TextInput> texts) const;
};

/// Bag of words: mean of per-token Gaussian vectors seeded by the token hash.
class HashedTextEncoder final : public TextEncoder {
 public:
  explicit HashedTextEncoder(int dim = 64, uint64_t seed = 0);

  int dim() const override { return dim_; }
  Embedding encode(const TextInput& text) const override;
  std::vector<double> token_vector(std::string_view token) const;

 private:
  int dim_;
  uint64_t seed_;
};

/// Token lookup table loaded from JSON: {"dim": D, "tokens": {"word": [...], ...}}.
/// Unknown tokens are skipped.
class TableTextEncoder final : public TextEncoder {
 public:
  explicit TableTextEncoder(const std::filesystem::path& path);

  int dim() const override { return dim_; }
  Embedding encode(const TextInput& text) const override;

 private:
  int dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

std::unique_ptr<TextEncoder> make_text_encoder(const EncoderConfig& cfg);

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual int dim() const = 0;
  /// [B, 3, H, W] in [0, 1] -> [B, dim] unit rows; differentiable w.r.t. the images.
  virtual Tensor encode(const Tensor& images) const = 0;

  Embedding encode_image(const Image& image) const;
};

struct ImageEncoderConfig {
  int dim = 64;
  int feature_dim = 64;
  int image_res = 32;
  int width = 16;
};

/// Small CNN: three conv/pool stages, a feature layer, and a projection.
class ConvImageEncoder final : public ImageEncoder {
 public:
  ConvImageEncoder() = default;
  ConvImageEncoder(const ImageEncoderConfig& cfg, Rng& rng);
  /// Loads an encoder serialized with save(); used for `encoder.kind = external`.
  static ConvImageEncoder load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int dim() const override { return cfg_.dim; }
  Tensor encode(const Tensor& images) const override;
  /// Penultimate (pre-activation) features, [B, feature_dim].
  Tensor features(const Tensor& images) const;
  /// Projection and normalization of features() output.
  Tensor embed_features(const Tensor& features) const;

  const ImageEncoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  ImageEncoderConfig cfg_;
  ParamSet params_;
  Conv2d c0_, c1_, c2_;
  Linear feat_, proj_;
};

class IdentityEncoder {
 public:
  virtual ~IdentityEncoder() = default;
  virtual int dim() const = 0;
  virtual Embedding encode(const Image& image) const = 0;
};

/// Hand-built identity descriptor: square-rooted soft RGB histogram of
/// foreground pixels (pixels that differ from the background colour).
class HistogramIdentityEncoder final : public IdentityEncoder {
 public:
  explicit HistogramIdentityEncoder(int bins_per_channel = 4, Vec3 background = {1.0, 1.0, 1.0});

  int dim() const override { return bins_ * bins_ * bins_; }
  Embedding encode(const Image& image) const override;

 private:
  int bins_;
  Vec3 background_;
};

}  // namespace tg3d
