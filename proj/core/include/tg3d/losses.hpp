#pragma once

#include <span>
#include <vector>

#include "tg3d/encoders.hpp"
#include "tg3d/tensor.hpp"

namespace tg3d {

struct ContrastiveOptions {
  double tau = 0.07;
  /// Drops the inner 1/n of each per-sample term (plain InfoNCE).
  bool standard_infonce = false;
};

/// Symmetric text/image contrastive loss over paired rows of text [n, D] and
/// images [n, D]: (1/2n) sum_i [L(x_i) + L(s_i)], L(s_i) = -(1/n) log softmax_j(e_i . i_j / tau) at j = i.
Tensor contrastive_loss(const Tensor& text, const Tensor& images, const ContrastiveOptions& opts = {});

struct ScoreMap {
  Tensor weights;     // W [M, N]
  Tensor aggregated;  // F' = W^T F, [N, d]
};

/// W = row-softmax(F K^T / sqrt(d)), F' = W^T F.
ScoreMap score_map_aggregate(const Tensor& f, const Tensor& k);

struct BceOptions {
  double eps = 1e-7;
  bool positive_only = false;
};

/// Binary cross-entropy summed over the k attributes and averaged over rows.
/// probs [B, k] or [k]; labels flattened the same way.
Tensor fine_grained_loss(const Tensor& probs, std::span<const double> labels, const BceOptions& opts = {});

struct GanLosses {
  Tensor d_loss;
  Tensor g_loss;
};

/// Non-saturating losses: d = -mean log s(real) - mean log(1 - s(fake)) + lambda * penalty,
/// g = -mean log s(fake). Either logit tensor may be undefined to skip its terms.
GanLosses gan_losses(const Tensor& real_logits, const Tensor& fake_logits, const Tensor& penalty, double lambda_r1);

/// Mean over rows of 1 - cos(cur_i - frozen_i, v_t). A row whose image direction
/// is shorter than `eps` contributes 1, with the gradient of 1 - <v, v_t/|v_t|>.
Tensor dcg_loss(const Tensor& cur, const Tensor& frozen, std::span<const double> v_t, double eps = 1e-10);

/// Text direction E_T(s_star) - E_T(s_o); throws "style prompts indistinguishable".
std::vector<double> text_direction(const TextEncoder& encoder, const TextInput& s_star, const TextInput& s_o,
                                   double eps = 1e-6);

/// Image-level form: encodes both image batches and the two prompts.
Tensor dcg_loss(const Tensor& imgs_cur, const Tensor& imgs_frozen, const TextInput& s_star, const TextInput& s_o,
                const TextEncoder& text_encoder, const ImageEncoder& image_encoder);

}  // namespace tg3d
