#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "tg3d/losses.hpp"

using namespace tg3d;
using tg3d::testing::grad_rel_error;
using tg3d::testing::probe;
using tg3d::testing::random_leaf;

namespace {

Tensor unit_rows(const Tensor& x) { return normalize_rows(x); }

// Direct evaluation of the symmetric contrastive loss.
double contrastive_reference(const Tensor& e, const Tensor& x, double tau, bool standard) {
  const int n = e.dim(0), d = e.dim(1);
  auto dot = [&](const Tensor& a, int i, const Tensor& b, int j) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += a.at(i * d + k) * b.at(j * d + k);
    return s / tau;
  };
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double zs = 0.0, zx = 0.0;
    for (int j = 0; j < n; ++j) {
      zs += std::exp(dot(e, i, x, j));
      zx += std::exp(dot(x, i, e, j));
    }
    const double ls = -(dot(e, i, x, i) - std::log(zs));
    const double lx = -(dot(x, i, e, i) - std::log(zx));
    total += (ls + lx) * (standard ? 1.0 : 1.0 / n);
  }
  return total / (2.0 * n);
}

}  // namespace

TEST(Contrastive, ZeroForSinglePair) {
  Rng rng(1);
  Tensor e = unit_rows(random_leaf({1, 8}, rng)), x = unit_rows(random_leaf({1, 8}, rng));
  EXPECT_EQ(contrastive_loss(e, x).item(), 0.0);
}

TEST(Contrastive, MatchesReference) {
  Rng rng(2);
  Tensor e = unit_rows(random_leaf({5, 6}, rng)), x = unit_rows(random_leaf({5, 6}, rng));
  for (bool standard : {false, true}) {
    ContrastiveOptions o{0.07, standard};
    EXPECT_NEAR(contrastive_loss(e, x, o).item(), contrastive_reference(e, x, 0.07, standard), 1e-10);
  }
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor e = random_leaf({4, 5}, rng), x = random_leaf({4, 5}, rng);
  EXPECT_LT(grad_rel_error([&] { return contrastive_loss(unit_rows(e), unit_rows(x), {0.5, false}); }, {e, x}), 1e-6);
}

TEST(Contrastive, PerfectAlignmentBeatsShuffled) {
  Rng rng(4);
  Tensor e = unit_rows(random_leaf({6, 16}, rng));
  Tensor shuffled = concat({slice(e, 0, 1, 5), slice(e, 0, 0, 1)}, 0);
  EXPECT_LT(contrastive_loss(e, e).item(), contrastive_loss(e, shuffled).item());
  EXPECT_THROW(contrastive_loss(e, slice(e, 0, 0, 3)), std::invalid_argument);
}

TEST(ScoreMap, RowsSumToOneAndAggregateIsWeightedSum) {
  Rng rng(5);
  Tensor f = random_leaf({7, 4}, rng), k = random_leaf({3, 4}, rng);
  const auto sm = score_map_aggregate(f, k);
  ASSERT_EQ(sm.weights.shape(), (Shape{7, 3}));
  for (int m = 0; m < 7; ++m) {
    double s = 0.0;
    for (int n = 0; n < 3; ++n) s += sm.weights.at(m * 3 + n);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 4; ++c) {
      double s = 0.0;
      for (int m = 0; m < 7; ++m) s += sm.weights.at(m * 3 + n) * f.at(m * 4 + c);
      EXPECT_NEAR(sm.aggregated.at(n * 4 + c), s, 1e-12);
    }
}

TEST(ScoreMap, SaturatedLogitsGiveIdentityAggregation) {
  // M = N, part i aligned with token i only and scaled up: W -> I, F' -> F.
  const int n = 4;
  std::vector<double> fv(n * n, 0.0);
  for (int i = 0; i < n; ++i) fv[static_cast<size_t>(i * n + i)] = 40.0;
  Tensor f = Tensor::from({n, n}, fv), k = Tensor::from({n, n}, fv);
  const auto sm = score_map_aggregate(f, k);
  for (int i = 0; i < n * n; ++i) {
    EXPECT_NEAR(sm.weights.at(i), i % (n + 1) == 0 ? 1.0 : 0.0, 1e-3);
    EXPECT_NEAR(sm.aggregated.at(i), f.at(i), 1e-3 * 40.0);
  }
}

TEST(ScoreMap, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  Tensor f = random_leaf({5, 3}, rng), k = random_leaf({4, 3}, rng);
  EXPECT_LT(grad_rel_error(
                [&] {
                  auto sm = score_map_aggregate(f, k);
                  return probe(sm.aggregated) + probe(sm.weights, 7);
                },
                {f, k}),
            1e-6);
  EXPECT_THROW(score_map_aggregate(Tensor::zeros({2, 0}), Tensor::zeros({2, 0})), std::invalid_argument);
}

TEST(FineGrained, HalfProbabilitiesGiveKLn2) {
  const int k = 8;
  Tensor p = Tensor::full({3, k}, 0.5);
  std::vector<double> labels(3 * k);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  EXPECT_DOUBLE_EQ(fine_grained_loss(p, labels).item(), k * std::numbers::ln2);
}

TEST(FineGrained, GradientAndPositiveOnlyVariant) {
  Rng rng(7);
  Tensor logits = random_leaf({2, 5}, rng);
  const std::vector<double> labels{1, 0, 0, 1, 1, 0, 1, 0, 0, 0};
  EXPECT_LT(grad_rel_error([&] { return fine_grained_loss(sigmoid(logits), labels); }, {logits}), 1e-6);
  // positive_only drops the (1 - y) log(1 - p) terms
  Tensor p = Tensor::full({1, 2}, 0.25);
  BceOptions pos;
  pos.positive_only = true;
  EXPECT_NEAR(fine_grained_loss(p, std::vector<double>{1, 0}, pos).item(), -std::log(0.25), 1e-6);
  EXPECT_THROW(fine_grained_loss(p, std::vector<double>{1}), std::invalid_argument);
}

TEST(Gan, ZeroLogitsGiveTwoLn2AndLn2) {
  Tensor zero = Tensor::zeros({4});
  const auto l = gan_losses(zero, zero, Tensor::scalar(0.0), 10.0);
  EXPECT_DOUBLE_EQ(l.d_loss.item(), 2 * std::numbers::ln2);
  EXPECT_DOUBLE_EQ(l.g_loss.item(), std::numbers::ln2);
}

TEST(Gan, PenaltyAndGradients) {
  Rng rng(8);
  Tensor real = random_leaf({3}, rng), fake = random_leaf({3}, rng), pen = Tensor::parameter({}, {0.7});
  const double base = gan_losses(real, fake, Tensor::scalar(0.0), 2.0).d_loss.item();
  EXPECT_NEAR(gan_losses(real, fake, Tensor::scalar(0.7), 2.0).d_loss.item(), base + 1.4, 1e-12);
  EXPECT_LT(grad_rel_error(
                [&] {
                  auto l = gan_losses(real, fake, pen, 2.0);
                  return l.d_loss + l.g_loss * 0.3;
                },
                {real, fake, pen}),
            1e-6);
}

TEST(Dcg, ParallelOrthogonalAntiParallel) {
  const std::vector<double> vt{1.0, 0.0, 0.0};
  Tensor frozen = Tensor::from({1, 3}, {0.2, 0.3, 0.4});
  auto loss_for = [&](double dx, double dy) {
    return dcg_loss(Tensor::from({1, 3}, {0.2 + dx, 0.3 + dy, 0.4}), frozen, vt).item();
  };
  EXPECT_EQ(loss_for(0.5, 0.0), 0.0);
  EXPECT_EQ(loss_for(0.0, 0.5), 1.0);
  EXPECT_EQ(loss_for(-0.5, 0.0), 2.0);
}

TEST(Dcg, DegenerateRowsAndGradients) {
  const std::vector<double> vt{0.0, 2.0};
  Tensor frozen = Tensor::from({2, 2}, {0.1, 0.2, 0.3, 0.4});
  Tensor same = Tensor::parameter({2, 2}, {0.1, 0.2, 0.3, 0.4});
  Tensor l = dcg_loss(same, frozen, vt);
  EXPECT_EQ(l.item(), 1.0);
  l.backward();
  // degenerate rows pull along +v_T: gradient -v_T/|v_T| / rows
  EXPECT_DOUBLE_EQ(same.grad()[1], -0.5);
  EXPECT_DOUBLE_EQ(same.grad()[0], 0.0);
  Rng rng(9);
  Tensor cur = random_leaf({3, 4}, rng);
  Tensor fr = Tensor::from({3, 4}, rng.normal_vector(12));
  const auto v = rng.normal_vector(4);
  EXPECT_LT(grad_rel_error([&] { return dcg_loss(cur, fr, v); }, {cur}), 1e-6);
  EXPECT_THROW(dcg_loss(cur, fr, std::vector<double>(4, 0.0)), std::invalid_argument);
}

TEST(Dcg, MeanOverPosesEqualsMeanOfSinglePoseLosses) {
  Rng rng(10);
  Tensor cur = Tensor::from({4, 5}, rng.normal_vector(20)), fr = Tensor::from({4, 5}, rng.normal_vector(20));
  const auto v = rng.normal_vector(5);
  double single = 0.0;
  for (int i = 0; i < 4; ++i) single += dcg_loss(slice(cur, 0, i, 1), slice(fr, 0, i, 1), v).item() / 4;
  EXPECT_NEAR(dcg_loss(cur, fr, v).item(), single, 1e-14);
}

TEST(Dcg, TextDirectionRejectsIdenticalPrompts) {
  HashedTextEncoder enc(16, 0);
  EXPECT_THROW(text_direction(enc, "Photo", "photo"), std::invalid_argument);
  const auto d = text_direction(enc, "a red-tinted face", "Photo");
  double n = 0.0;
  for (double x : d) n += x * x;
  EXPECT_GT(n, 1e-6);
}
