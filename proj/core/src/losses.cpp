#include "tg3d/losses.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace tg3d {

using detail::input_grad;
using detail::input_value;
using detail::make_result;
using detail::wants_grad;

namespace {
Tensor identity_mask(int n) {
  std::vector<double> eye(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eye[static_cast<size_t>(i) * n + i] = 1.0;
  return Tensor::from({n, n}, std::move(eye));
}
}  // namespace

Tensor contrastive_loss(const Tensor& text, const Tensor& images, const ContrastiveOptions& opts) {
  if (!(opts.tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  if (text.rank() != 2 || text.shape() != images.shape()) {
    throw std::invalid_argument(fmt::format("contrastive_loss: text {} vs images {}", shape_str(text.shape()),
                                            shape_str(images.shape())));
  }
  const int n = text.dim(0);
  if (n < 1) throw std::invalid_argument("contrastive_loss: empty batch");
  Tensor logits = matmul(text, images, false, true) * (1.0 / opts.tau);
  const Tensor eye = identity_mask(n);
  // Row i of log_softmax(logits) is L(s_i) over images; row i of the transpose is L(x_i) over texts.
  Tensor diag_s = sum(log_softmax_rows(logits) * eye);
  Tensor diag_x = sum(log_softmax_rows(transpose(logits)) * eye);
  const double inner = opts.standard_infonce ? 1.0 : 1.0 / n;
  return (diag_s + diag_x) * (-inner / (2.0 * n));
}

ScoreMap score_map_aggregate(const Tensor& f, const Tensor& k) {
  if (f.rank() != 2 || k.rank() != 2 || f.dim(1) != k.dim(1)) {
    throw std::invalid_argument(fmt::format("score_map_aggregate: F {} vs K {}", shape_str(f.shape()),
                                            shape_str(k.shape())));
  }
  const int d = f.dim(1);
  if (d == 0) throw std::invalid_argument("score_map_aggregate: feature dimension is zero");
  ScoreMap out;
  out.weights = softmax_rows(matmul(f, k, false, true) * (1.0 / std::sqrt(static_cast<double>(d))));
  out.aggregated = matmul(out.weights, f, true, false);
  return out;
}

Tensor fine_grained_loss(const Tensor& probs, std::span<const double> labels, const BceOptions& opts) {
  if (static_cast<int64_t>(labels.size()) != probs.size()) {
    throw std::invalid_argument(
        fmt::format("fine_grained_loss: {} labels for probabilities {}", labels.size(), shape_str(probs.shape())));
  }
  const int rows = probs.rank() == 2 ? probs.dim(0) : 1;
  const Tensor y = Tensor::from(probs.shape(), {labels.begin(), labels.end()});
  Tensor p = clamp(probs, opts.eps, 1.0 - opts.eps);
  Tensor ll = y * log(p);
  if (!opts.positive_only) {
    const Tensor not_y = Tensor::from(probs.shape(), std::vector<double>(labels.size(), 1.0)) - y;
    ll = ll + not_y * log((-p) + 1.0);
  }
  return sum(ll) * (-1.0 / rows);
}

GanLosses gan_losses(const Tensor& real_logits, const Tensor& fake_logits, const Tensor& penalty, double lambda_r1) {
  GanLosses out;
  Tensor d = Tensor::scalar(0.0);
  if (real_logits.defined()) d = d - mean(log_sigmoid(real_logits));
  if (fake_logits.defined()) {
    d = d - mean(log_sigmoid(-fake_logits));
    out.g_loss = -mean(log_sigmoid(fake_logits));
  }
  if (penalty.defined() && lambda_r1 != 0.0) d = d + penalty * lambda_r1;
  out.d_loss = d;
  return out;
}

Tensor dcg_loss(const Tensor& cur, const Tensor& frozen, std::span<const double> v_t, double eps) {
  if (cur.rank() != 2 || cur.shape() != frozen.shape() || cur.dim(1) != static_cast<int>(v_t.size())) {
    throw std::invalid_argument(fmt::format("dcg_loss: current {} vs frozen {} vs text direction {}",
                                            shape_str(cur.shape()), shape_str(frozen.shape()), v_t.size()));
  }
  const int m = cur.dim(0), dim = cur.dim(1);
  if (m < 1) throw std::invalid_argument("dcg_loss: need at least one image pair");
  double tn = 0.0;
  for (double v : v_t) tn += v * v;
  tn = std::sqrt(tn);
  if (!(tn > eps)) throw std::invalid_argument("style prompts indistinguishable");
  std::vector<double> vt_hat(v_t.begin(), v_t.end());
  for (auto& v : vt_hat) v /= tn;

  const auto& cv = cur.data();
  const auto& fv = frozen.data();
  std::vector<double> dir(static_cast<size_t>(m) * dim), norms(static_cast<size_t>(m)), cosines(static_cast<size_t>(m));
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double nn = 0.0, dot = 0.0;
    for (int k = 0; k < dim; ++k) {
      const size_t j = static_cast<size_t>(i) * dim + k;
      dir[j] = cv[j] - fv[j];
      nn += dir[j] * dir[j];
      dot += dir[j] * vt_hat[static_cast<size_t>(k)];
    }
    norms[static_cast<size_t>(i)] = std::sqrt(nn);
    cosines[static_cast<size_t>(i)] = norms[static_cast<size_t>(i)] < eps ? 0.0 : dot / norms[static_cast<size_t>(i)];
    total += 1.0 - cosines[static_cast<size_t>(i)];
  }
  return make_result({}, {total / m}, {cur, frozen}, [=](Node& self) {
    const double g = self.grad[0] / m;
    std::vector<double> gd(static_cast<size_t>(m) * dim);
    for (int i = 0; i < m; ++i) {
      const double n = norms[static_cast<size_t>(i)];
      const double c = cosines[static_cast<size_t>(i)];
      for (int k = 0; k < dim; ++k) {
        const size_t j = static_cast<size_t>(i) * dim + k;
        // d(1 - cos)/dv = -(t_hat - cos * v_hat) / |v|
        gd[j] = n < eps ? -g * vt_hat[static_cast<size_t>(k)] : -g * (vt_hat[static_cast<size_t>(k)] - c * dir[j] / n) / n;
      }
    }
    if (wants_grad(self, 0)) {
      auto& d0 = input_grad(self, 0);
      for (size_t j = 0; j < gd.size(); ++j) d0[j] += gd[j];
    }
    if (wants_grad(self, 1)) {
      auto& d1 = input_grad(self, 1);
      for (size_t j = 0; j < gd.size(); ++j) d1[j] -= gd[j];
    }
  });
}

std::vector<double> text_direction(const TextEncoder& encoder, const TextInput& s_star, const TextInput& s_o,
                                   double eps) {
  const Embedding a = encoder.encode(s_star);
  const Embedding b = encoder.encode(s_o);
  std::vector<double> v(a.values.size());
  double n = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    v[i] = a.values[i] - b.values[i];
    n += v[i] * v[i];
  }
  if (!(std::sqrt(n) > eps)) throw std::invalid_argument("style prompts indistinguishable");
  return v;
}

Tensor dcg_loss(const Tensor& imgs_cur, const Tensor& imgs_frozen, const TextInput& s_star, const TextInput& s_o,
                const TextEncoder& text_encoder, const ImageEncoder& image_encoder) {
  const auto v_t = text_direction(text_encoder, s_star, s_o);
  return dcg_loss(image_encoder.encode(imgs_cur), image_encoder.encode(imgs_frozen), v_t);
}

}  // namespace tg3d
