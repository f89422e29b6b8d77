#include "tg3d/metrics.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tg3d/losses.hpp"

namespace tg3d {

using nlohmann::json;

// ---------------------------------------------------------------- scores

double clip_score(const Embedding& image, const Embedding& text) {
  return std::max(100.0 * cosine(image, text), 0.0);
}

double clip_score(const Image& x, const TextInput& s, const TextEncoder& text_encoder,
                  const ImageEncoder& image_encoder) {
  return clip_score(image_encoder.encode_image(x), text_encoder.encode(s));
}

double mvic(std::span<const Image> views, const IdentityEncoder& identity) {
  if (views.size() < 2) throw std::invalid_argument("mvic needs at least two views");
  std::vector<Embedding> e;
  for (const auto& v : views) e.push_back(identity.encode(v));
  double total = 0.0;
  int pairs = 0;
  for (size_t i = 0; i < e.size(); ++i)
    for (size_t j = i + 1; j < e.size(); ++j) {
      total += cosine(e[i], e[j]);
      ++pairs;
    }
  return total / pairs;
}

double mvic(const Generator& g, std::span<const double> z, const TextInput& s, std::span<const CameraParams> poses,
            const CameraParams& cond, const TextEncoder& text_encoder, const IdentityEncoder& identity) {
  if (poses.size() < 2) throw std::invalid_argument("mvic needs at least two views");
  NoGradGuard no_grad;
  const int v = static_cast<int>(poses.size());
  const Embedding e = text_encoder.encode(s);
  std::vector<double> zs, es;
  for (int i = 0; i < v; ++i) {
    zs.insert(zs.end(), z.begin(), z.end());
    es.insert(es.end(), e.values.begin(), e.values.end());
  }
  const std::vector<CameraParams> conds(poses.size(), cond);
  const auto out = g.forward(Tensor::from({v, static_cast<int>(z.size())}, zs), Tensor::from({v, e.dim()}, es), poses,
                             conds, g.config().render.resolution);
  std::vector<Image> views;
  for (int i = 0; i < v; ++i) views.push_back(to_image(out.image, i));
  return mvic(views, identity);
}

// ---------------------------------------------------------------- Frechet distance

namespace {
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat spd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace

double frechet_distance(std::span<const double> mu_a, std::span<const double> cov_a, std::span<const double> mu_b,
                        std::span<const double> cov_b, int dim, double eps) {
  const auto d = static_cast<size_t>(dim);
  if (mu_a.size() != d || mu_b.size() != d || cov_a.size() != d * d || cov_b.size() != d * d) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  const Eigen::Map<const Eigen::VectorXd> ma(mu_a.data(), dim), mb(mu_b.data(), dim);
  Mat sa = Eigen::Map<const RowMat>(cov_a.data(), dim, dim);
  Mat sb = Eigen::Map<const RowMat>(cov_b.data(), dim, dim);
  sa = 0.5 * (sa + sa.transpose()) + eps * Mat::Identity(dim, dim);
  sb = 0.5 * (sb + sb.transpose()) + eps * Mat::Identity(dim, dim);
  // tr (Sa Sb)^(1/2) = tr (Sa^(1/2) Sb Sa^(1/2))^(1/2); the inner product is symmetric.
  const Mat ra = spd_sqrt(sa);
  Mat inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double dist = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

void feature_stats(const Tensor& feats, std::vector<double>& mean, std::vector<double>& cov) {
  if (feats.rank() != 2 || feats.dim(0) < 2) throw std::invalid_argument("feature_stats needs at least two rows");
  const int n = feats.dim(0), d = feats.dim(1);
  const Eigen::Map<const RowMat> x(feats.data().data(), n, d);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMat centered = x.rowwise() - mu;
  const RowMat c = (centered.transpose() * centered) / static_cast<double>(n - 1);
  mean.assign(mu.data(), mu.data() + d);
  cov.assign(c.data(), c.data() + static_cast<size_t>(d) * d);
}

double fid(const Tensor& feats_a, const Tensor& feats_b, double eps) {
  if (feats_a.rank() != 2 || feats_b.rank() != 2 || feats_a.dim(1) != feats_b.dim(1)) {
    throw std::invalid_argument(fmt::format("fid: feature dimension mismatch ({} vs {})", shape_str(feats_a.shape()),
                                            shape_str(feats_b.shape())));
  }
  std::vector<double> ma, ca, mb, cb;
  feature_stats(feats_a, ma, ca);
  feature_stats(feats_b, mb, cb);
  return frechet_distance(ma, ca, mb, cb, feats_a.dim(1), eps);
}

// ---------------------------------------------------------------- judge

void Judge::init(const ImageEncoderConfig& enc, int attributes, Rng& rng) {
  encoder_ = ConvImageEncoder(enc, rng);
  probe_params_ = ParamSet();
  probe_ = Linear::make(probe_params_, "probe", enc.feature_dim, attributes, rng);
}

Tensor Judge::probe(const Tensor& images) const { return sigmoid(probe_(probe_params_, encoder_.features(images))); }

Tensor embed_captions(std::span<const TextInput> texts, const TextEncoder& encoder) {
  const int d = encoder.dim();
  std::vector<double> rows(texts.size() * static_cast<size_t>(d), 0.0);
  for (size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].tokens.empty()) continue;
    const Embedding e = encoder.encode(texts[i]);
    std::copy(e.values.begin(), e.values.end(), rows.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(d)));
  }
  return Tensor::from({static_cast<int>(texts.size()), d}, std::move(rows));
}

Judge Judge::fit(const Dataset& data, const std::vector<size_t>& indices, const TextEncoder& text_encoder,
                 const JudgeConfig& cfg, std::vector<double>* losses) {
  std::vector<size_t> labeled;
  for (size_t i : indices)
    if (!data.manifest.records[i].captions.empty()) labeled.push_back(i);
  if (labeled.size() < 2) throw std::invalid_argument("judge fitting needs at least two captioned records");
  if (cfg.encoder.dim != text_encoder.dim()) throw std::invalid_argument("judge encoder and text encoder dimensions differ");
  Rng rng(cfg.seed);
  Judge j;
  j.init(cfg.encoder, attribute_count(), rng);
  auto params = prefixed(j.encoder_.params(), "enc.");
  append(params, prefixed(j.probe_params_, "probe."));
  Adam opt(params, {cfg.lr, 0.9, 0.999, 1e-8});
  const int b = std::min<int>(cfg.batch, static_cast<int>(labeled.size()));
  for (int step = 0; step < cfg.steps; ++step) {
    // Distinct records per batch so no caption is its own negative.
    std::vector<size_t> pick;
    while (static_cast<int>(pick.size()) < b) {
      const size_t idx = labeled[static_cast<size_t>(rng.uniform_int(static_cast<int>(labeled.size())))];
      if (std::find(pick.begin(), pick.end(), idx) == pick.end()) pick.push_back(idx);
    }
    std::vector<Image> imgs;
    std::vector<TextInput> texts;
    std::vector<double> labels;
    for (size_t idx : pick) {
      const Record& r = data.manifest.records[idx];
      imgs.push_back(data.images[idx]);
      texts.emplace_back(r.captions[static_cast<size_t>(rng.uniform_int(static_cast<int>(r.captions.size())))]);
      labels.insert(labels.end(), r.attributes.begin(), r.attributes.end());
    }
    Tensor x = to_tensor(imgs);
    // Mild blur augmentation so the judge also reads slightly soft renders.
    const double sigma = rng.uniform(0.0, 0.8);
    if (sigma > 0.05) x = gaussian_blur(x, sigma);
    opt.zero_grad();
    Tensor feats = j.encoder_.features(x);
    Tensor emb = j.encoder_.embed_features(feats);
    Tensor l_cl = contrastive_loss(text_encoder.encode_batch(texts), emb, {cfg.tau, true});
    Tensor probs = sigmoid(j.probe_(j.probe_params_, feats));
    Tensor loss = l_cl + fine_grained_loss(probs, labels);
    loss.backward();
    opt.step();
    if (losses) losses->push_back(loss.item());
  }
  j.encoder_.params().set_trainable(false);
  j.probe_params_.set_trainable(false);
  j.fitted_ = true;
  return j;
}

void Judge::save(Archive& archive, const std::string& prefix) const {
  const auto& c = encoder_.config();
  archive.meta[prefix] = {{"dim", c.dim}, {"feature_dim", c.feature_dim}, {"image_res", c.image_res},
                          {"width", c.width}, {"fitted", fitted_}};
  archive.add(encoder_.params().items(), prefix + "enc.");
  archive.add(probe_params_.items(), prefix + "probe.");
}

Judge Judge::load(const Archive& archive, const std::string& prefix) {
  const json& m = archive.meta.at(prefix);
  ImageEncoderConfig c;
  c.dim = m.at("dim").get<int>();
  c.feature_dim = m.at("feature_dim").get<int>();
  c.image_res = m.at("image_res").get<int>();
  c.width = m.at("width").get<int>();
  Rng rng(0);
  Judge j;
  j.init(c, attribute_count(), rng);
  j.encoder_.params().load_values(archive.with_prefix(prefix + "enc."));
  j.probe_params_.load_values(archive.with_prefix(prefix + "probe."));
  j.encoder_.params().set_trainable(false);
  j.probe_params_.set_trainable(false);
  j.fitted_ = m.value("fitted", false);
  return j;
}

// ---------------------------------------------------------------- report

json MetricsReport::to_json() const {
  json per = json::object();
  for (size_t i = 0; i < per_attribute_accuracy.size() && i < attribute_names().size(); ++i) {
    per[attribute_names()[i]] = per_attribute_accuracy[i];
  }
  return {{"mvic_mean", mvic_mean},
          {"clip_score_mean", clip_score_mean},
          {"clip_score_mismatched", clip_score_mismatched},
          {"fid", fid},
          {"attribute_accuracy", attribute_accuracy},
          {"label_prior_baseline", label_prior_baseline},
          {"probe_real_accuracy", probe_real_accuracy},
          {"per_attribute_accuracy", per},
          {"n_samples", n_samples}};
}

const json& metrics_report_schema() {
  static const json schema = json::parse(R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "tg3d metrics report",
  "type": "object",
  "required": ["mvic_mean", "clip_score_mean", "clip_score_mismatched", "fid", "attribute_accuracy",
               "label_prior_baseline", "probe_real_accuracy", "per_attribute_accuracy", "n_samples"],
  "properties": {
    "mvic_mean": {"type": "number", "minimum": -1, "maximum": 1},
    "clip_score_mean": {"type": "number", "minimum": 0, "maximum": 100},
    "clip_score_mismatched": {"type": "number", "minimum": 0, "maximum": 100},
    "fid": {"type": "number", "minimum": 0},
    "attribute_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
    "label_prior_baseline": {"type": "number", "minimum": 0, "maximum": 1},
    "probe_real_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
    "per_attribute_accuracy": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
    "n_samples": {"type": "integer", "minimum": 1}
  }
})");
  return schema;
}

namespace {
std::string check_value(const json& v, const json& rule, const std::string& where) {
  const std::string type = rule.value("type", "");
  if (type == "number" && !v.is_number()) return where + " is not a number";
  if (type == "integer" && !v.is_number_integer()) return where + " is not an integer";
  if (type == "object" && !v.is_object()) return where + " is not an object";
  if (v.is_number()) {
    const double x = v.get<double>();
    if (!std::isfinite(x)) return where + " is not finite";
    if (rule.contains("minimum") && x < rule["minimum"].get<double>()) return where + " is below its minimum";
    if (rule.contains("maximum") && x > rule["maximum"].get<double>()) return where + " is above its maximum";
  }
  if (v.is_object() && rule.contains("additionalProperties")) {
    for (const auto& [k, child] : v.items()) {
      auto err = check_value(child, rule["additionalProperties"], where + "." + k);
      if (!err.empty()) return err;
    }
  }
  return {};
}
}  // namespace

std::string validate_metrics_report(const json& report) {
  const json& schema = metrics_report_schema();
  if (!report.is_object()) return "report is not an object";
  for (const auto& key : schema["required"]) {
    if (!report.contains(key.get<std::string>())) return "missing " + key.get<std::string>();
  }
  for (const auto& [key, rule] : schema["properties"].items()) {
    if (!report.contains(key)) continue;
    auto err = check_value(report[key], rule, key);
    if (!err.empty()) return err;
  }
  return {};
}

// ---------------------------------------------------------------- evaluation

MetricsReport evaluate_generator(const Generator& g, int render_res, const Judge& judge, const Dataset& data,
                                 const std::vector<size_t>& held_out, const TextEncoder& text_encoder,
                                 const IdentityEncoder& identity, const PoseDistribution& poses,
                                 const EvalOptions& opts) {
  NoGradGuard no_grad;
  std::vector<size_t> eval;
  for (size_t i : held_out)
    if (!data.manifest.records[i].captions.empty()) eval.push_back(i);
  if (eval.size() < 2) throw std::invalid_argument("evaluation needs at least two captioned held-out records");
  if (static_cast<int>(eval.size()) > opts.n_samples) eval.resize(static_cast<size_t>(opts.n_samples));
  const int n = static_cast<int>(eval.size());
  const int k = attribute_count();
  const int zd = g.config().z_dim;
  Rng rng(opts.seed);

  // Generated images, one per evaluation record.
  std::vector<Image> generated;
  constexpr int kChunk = 16;
  for (int start = 0; start < n; start += kChunk) {
    const int b = std::min(kChunk, n - start);
    std::vector<double> z;
    std::vector<TextInput> texts;
    std::vector<CameraParams> cams;
    for (int i = 0; i < b; ++i) {
      const Record& r = data.manifest.records[eval[static_cast<size_t>(start + i)]];
      const auto zi = rng.normal_vector(static_cast<size_t>(zd));
      z.insert(z.end(), zi.begin(), zi.end());
      texts.emplace_back(r.captions.front());
      cams.push_back(r.camera);
    }
    const auto out = g.forward(Tensor::from({b, zd}, z), embed_captions(texts, text_encoder), cams, render_res);
    for (int i = 0; i < b; ++i) generated.push_back(to_image(out.image, i));
  }

  MetricsReport rep;
  rep.n_samples = n;
  const auto& enc = judge.image_encoder();

  // FID between held-out real images and the generated set.
  std::vector<Image> real;
  for (size_t i : held_out) real.push_back(data.images[i]);
  rep.fid = fid(enc.features(to_tensor(real)), enc.features(to_tensor(generated)));

  // CLIP scores, matched and mismatched (next record with different attributes).
  const Tensor gen_emb = enc.encode(to_tensor(generated));
  double matched = 0.0, mismatched = 0.0;
  for (int i = 0; i < n; ++i) {
    const Record& r = data.manifest.records[eval[static_cast<size_t>(i)]];
    Embedding ei{{gen_emb.data().begin() + static_cast<std::ptrdiff_t>(i) * enc.dim(),
                  gen_emb.data().begin() + static_cast<std::ptrdiff_t>(i + 1) * enc.dim()}};
    matched += clip_score(ei, text_encoder.encode(r.captions.front()));
    int j = (i + 1) % n;
    while (j != i && data.manifest.records[eval[static_cast<size_t>(j)]].attributes == r.attributes) j = (j + 1) % n;
    mismatched += clip_score(ei, text_encoder.encode(data.manifest.records[eval[static_cast<size_t>(j)]].captions.front()));
  }
  rep.clip_score_mean = matched / n;
  rep.clip_score_mismatched = mismatched / n;

  // Attribute accuracy under the probe, and the majority-label baseline.
  auto accuracy = [&](const Tensor& probs, const std::vector<size_t>& recs, std::vector<double>* per) {
    std::vector<double> hits(static_cast<size_t>(k), 0.0);
    for (size_t i = 0; i < recs.size(); ++i) {
      const auto& y = data.manifest.records[recs[i]].attributes;
      for (int a = 0; a < k; ++a) {
        const bool pred = probs.at(static_cast<int64_t>(i) * k + a) > 0.5;
        hits[static_cast<size_t>(a)] += pred == (y[static_cast<size_t>(a)] > 0.5);
      }
    }
    double total = 0.0;
    for (auto& h : hits) {
      h /= static_cast<double>(recs.size());
      total += h;
    }
    if (per) *per = hits;
    return total / k;
  };
  rep.attribute_accuracy = accuracy(judge.probe(to_tensor(generated)), eval, &rep.per_attribute_accuracy);
  double baseline = 0.0;
  for (int a = 0; a < k; ++a) {
    double p = 0.0;
    for (size_t i : eval) p += data.manifest.records[i].attributes[static_cast<size_t>(a)];
    p /= n;
    baseline += std::max(p, 1.0 - p);
  }
  rep.label_prior_baseline = baseline / k;

  // Probe accuracy on real images the judge never saw.
  std::vector<size_t> unseen;
  for (size_t i = 0; i < data.size() && static_cast<int>(unseen.size()) < n; ++i)
    if (std::find(held_out.begin(), held_out.end(), i) == held_out.end()) unseen.push_back(i);
  if (!unseen.empty()) {
    std::vector<Image> imgs;
    for (size_t i : unseen) imgs.push_back(data.images[i]);
    rep.probe_real_accuracy = accuracy(judge.probe(to_tensor(imgs)), unseen, nullptr);
  }

  // Multi-view identity consistency on the pose ring.
  const auto ring = poses.ring(opts.mvic_views);
  double mv = 0.0;
  const int ids = std::min(opts.mvic_identities, n);
  for (int i = 0; i < ids; ++i) {
    const auto z = rng.normal_vector(static_cast<size_t>(zd));
    mv += mvic(g, z, data.manifest.records[eval[static_cast<size_t>(i)]].captions.front(), ring, poses.canonical(),
               text_encoder, identity);
  }
  rep.mvic_mean = mv / std::max(ids, 1);
  return rep;
}

}  // namespace tg3d
