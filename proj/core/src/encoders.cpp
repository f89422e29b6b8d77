#include "tg3d/encoders.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "tg3d/archive.hpp"

namespace tg3d {

namespace {
Embedding normalized_embedding(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  if (!(n > 0.0)) throw std::invalid_argument("cannot normalize a zero embedding");
  for (auto& x : v) x /= n;
  return Embedding{std::move(v)};
}
}  // namespace

double Embedding::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

TextInput::TextInput(std::string text) : raw(std::move(text)), tokens(tokenize(raw)) {}

Tensor TextEncoder::encode_batch(std::span<const TextInput> texts) const {
  std::vector<double> rows;
  rows.reserve(texts.size() * static_cast<size_t>(dim()));
  for (const auto& t : texts) {
    auto e = encode(t);
    rows.insert(rows.end(), e.values.begin(), e.values.end());
  }
  return Tensor::from({static_cast<int>(texts.size()), dim()}, std::move(rows));
}

// ---------------------------------------------------------------- text

HashedTextEncoder::HashedTextEncoder(int dim, uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw std::invalid_argument("text encoder dimension must be positive");
}

std::vector<double> HashedTextEncoder::token_vector(std::string_view token) const {
  Rng rng(fnv1a(token) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
  return rng.normal_vector(static_cast<size_t>(dim_));
}

Embedding HashedTextEncoder::encode(const TextInput& text) const {
  if (text.tokens.empty()) throw std::invalid_argument("empty text");
  std::vector<double> acc(static_cast<size_t>(dim_), 0.0);
  for (const auto& tok : text.tokens) {
    const auto v = token_vector(tok);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  for (auto& v : acc) v /= static_cast<double>(text.tokens.size());
  return normalized_embedding(std::move(acc));
}

TableTextEncoder::TableTextEncoder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open text encoder table '{}'", path.string()));
  const auto j = nlohmann::json::parse(in);
  dim_ = j.at("dim").get<int>();
  for (const auto& [tok, vec] : j.at("tokens").items()) {
    auto v = vec.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != dim_) {
      throw std::runtime_error(fmt::format("token '{}' has {} values, expected {}", tok, v.size(), dim_));
    }
    table_.emplace(tok, std::move(v));
  }
}

Embedding TableTextEncoder::encode(const TextInput& text) const {
  std::vector<double> acc(static_cast<size_t>(dim_), 0.0);
  int hits = 0;
  for (const auto& tok : text.tokens) {
    auto it = table_.find(tok);
    if (it == table_.end()) continue;
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += it->second[i];
    ++hits;
  }
  if (hits == 0) throw std::invalid_argument("empty text");
  return normalized_embedding(std::move(acc));
}

std::unique_ptr<TextEncoder> make_text_encoder(const EncoderConfig& cfg) {
  if (cfg.kind == "toy") return std::make_unique<HashedTextEncoder>(cfg.dim, cfg.seed);
  if (cfg.kind == "external") return std::make_unique<TableTextEncoder>(cfg.external_path);
  throw std::invalid_argument(fmt::format("unknown encoder kind '{}'", cfg.kind));
}

// ---------------------------------------------------------------- images

Embedding ImageEncoder::encode_image(const Image& image) const {
  NoGradGuard no_grad;
  Tensor e = encode(to_tensor(image));
  return Embedding{{e.data().begin(), e.data().end()}};
}

ConvImageEncoder::ConvImageEncoder(const ImageEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.image_res % 8 != 0) throw std::invalid_argument("image encoder resolution must be a multiple of 8");
  const int w = cfg.width;
  c0_ = Conv2d::make(params_, "conv0", 3, w, 3, rng);
  c1_ = Conv2d::make(params_, "conv1", w, 2 * w, 3, rng);
  c2_ = Conv2d::make(params_, "conv2", 2 * w, 2 * w, 3, rng);
  const int flat = 2 * w * (cfg.image_res / 8) * (cfg.image_res / 8);
  feat_ = Linear::make(params_, "feat", flat, cfg.feature_dim, rng);
  proj_ = Linear::make(params_, "proj", cfg.feature_dim, cfg.dim, rng);
}

Tensor ConvImageEncoder::features(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw std::invalid_argument(fmt::format("image encoder expects [B, 3, H, W], got {}", shape_str(images.shape())));
  }
  if (images.dim(2) != cfg_.image_res || images.dim(3) != cfg_.image_res) {
    throw std::invalid_argument(fmt::format("image encoder expects {}x{} images, got {}x{}", cfg_.image_res,
                                            cfg_.image_res, images.dim(2), images.dim(3)));
  }
  Tensor x = center_pixels(images);
  x = avg_pool2(leaky_relu(c0_(params_, x)));
  x = avg_pool2(leaky_relu(c1_(params_, x)));
  x = avg_pool2(leaky_relu(c2_(params_, x)));
  x = reshape(x, {images.dim(0), static_cast<int>(x.size() / images.dim(0))});
  return feat_(params_, x);
}

Tensor ConvImageEncoder::embed_features(const Tensor& features) const {
  return normalize_rows(proj_(params_, leaky_relu(features)));
}

Tensor ConvImageEncoder::encode(const Tensor& images) const { return embed_features(features(images)); }

void ConvImageEncoder::save(const std::filesystem::path& path) const {
  Archive a;
  a.meta = {{"kind", "conv_image_encoder"},
            {"dim", cfg_.dim},
            {"feature_dim", cfg_.feature_dim},
            {"image_res", cfg_.image_res},
            {"width", cfg_.width}};
  a.add(params_.items(), "");
  write_archive(path, a);
}

ConvImageEncoder ConvImageEncoder::load(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  ImageEncoderConfig cfg;
  cfg.dim = a.meta.at("dim").get<int>();
  cfg.feature_dim = a.meta.at("feature_dim").get<int>();
  cfg.image_res = a.meta.at("image_res").get<int>();
  cfg.width = a.meta.at("width").get<int>();
  Rng rng(0);
  ConvImageEncoder enc(cfg, rng);
  enc.params_.load_values(a.arrays);
  return enc;
}

// ---------------------------------------------------------------- identity

HistogramIdentityEncoder::HistogramIdentityEncoder(int bins_per_channel, Vec3 background)
    : bins_(bins_per_channel), background_(background) {
  if (bins_ < 2) throw std::invalid_argument("identity encoder needs at least 2 bins per channel");
}

Embedding HistogramIdentityEncoder::encode(const Image& image) const {
  if (image.pixels.size() != static_cast<size_t>(image.height) * image.width * 3 || image.pixels.empty()) {
    throw std::invalid_argument("identity encoder expects an H x W x 3 image");
  }
  std::vector<double> hist(static_cast<size_t>(dim()), 0.0);
  auto accumulate_pixel = [&](const double* rgb, double weight) {
    int lo[3];
    double frac[3];
    for (int c = 0; c < 3; ++c) {
      const double pos = std::clamp(rgb[c], 0.0, 1.0) * (bins_ - 1);
      lo[c] = std::min(static_cast<int>(pos), bins_ - 2);
      frac[c] = pos - lo[c];
    }
    for (int corner = 0; corner < 8; ++corner) {
      double w = weight;
      int idx = 0;
      for (int c = 0; c < 3; ++c) {
        const int bit = (corner >> c) & 1;
        w *= bit ? frac[c] : 1.0 - frac[c];
        idx = idx * bins_ + lo[c] + bit;
      }
      hist[static_cast<size_t>(idx)] += w;
    }
  };
  double total = 0.0;
  for (size_t p = 0; p < image.pixels.size(); p += 3) {
    double diff = 0.0;
    for (int c = 0; c < 3; ++c) diff = std::max(diff, std::abs(image.pixels[p + c] - background_[static_cast<size_t>(c)]));
    const double w = std::clamp(diff / 0.15, 0.0, 1.0);
    if (w <= 0.0) continue;
    accumulate_pixel(&image.pixels[p], w);
    total += w;
  }
  if (total < 1e-12) accumulate_pixel(background_.data(), 1.0);
  for (auto& v : hist) v = std::sqrt(v);
  return normalized_embedding(std::move(hist));
}

}  // namespace tg3d
