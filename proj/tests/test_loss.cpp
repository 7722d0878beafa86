#include <gtest/gtest.h>

#include <cmath>

#include "cardiacnet/loss.hpp"
#include "cardiacnet/rng.hpp"

using namespace cardiacnet;

namespace {

FeatureMap<double> random_logits(int n, int h, int w, std::uint64_t seed, double scale = 2.0) {
  Rng rng(seed);
  FeatureMap<double> m(n, 2, h, w);
  for (auto& v : m.values) v = scale * rng.normal();
  return m;
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> l(n);
  for (auto& v : l) v = rng.uniform() < 0.4 ? 1 : 0;
  return l;
}

double max_rel_fd_error(const FeatureMap<double>& o, const std::vector<std::uint8_t>& lab, const ZLossParams& zp,
                        double h) {
  const auto g = zloss_grad<double>(o, lab, zp);
  double worst = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    auto p = o, m = o;
    p.values[i] += h, m.values[i] -= h;
    const double num = (zloss<double>(p, lab, zp) - zloss<double>(m, lab, zp)) / (2 * h);
    worst = std::max(worst, std::abs(num - g.values[i]) / std::max(std::abs(num), 1e-8));
  }
  return worst;
}

}  // namespace

TEST(ZLoss, SinglePixelClosedForm) {
  FeatureMap<double> o(1, 2, 1, 1);
  o.values = {1.0, -1.0};
  const std::vector<std::uint8_t> lab{0};
  ZLossParams zp;
  zp.a = 1.0, zp.b = 0.0;
  EXPECT_NEAR(zloss<double>(o, lab, zp), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(zloss<double>(o, lab, zp), 0.313262, 1e-6);
}

TEST(ZLoss, ConstantMapHitsTheFloor) {
  FeatureMap<double> o(2, 2, 3, 3, 0.42);
  const auto lab = random_labels(18, 1);
  for (double a : {0.5, 1.0, 3.0})
    for (double b : {-1.0, 0.0, 2.0}) {
      ZLossParams zp;
      zp.a = a, zp.b = b;
      EXPECT_NEAR(zloss<double>(o, lab, zp), softplus(a * b) / a, 1e-12);
    }
}

TEST(ZLoss, AffineInvariance) {
  const auto o = random_logits(2, 4, 4, 2);
  const auto lab = random_labels(32, 3);
  const double base = zloss<double>(o, lab);
  for (double alpha : {0.5, 2.0, 10.0})
    for (double beta : {-5.0, 0.0, 7.0}) {
      auto t = o;
      for (auto& v : t.values) v = alpha * v + beta;
      EXPECT_NEAR(zloss<double>(t, lab), base, 1e-12);
    }
}

TEST(ZLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto o = random_logits(1, 4, 4, 10 + seed);
    const auto lab = random_labels(16, 20 + seed);
    EXPECT_LE(max_rel_fd_error(o, lab, ZLossParams{}, 1e-5), 1e-6);
  }
}

TEST(ZLoss, GradientMatchesFiniteDifferencesNonDefaultParams) {
  const auto o = random_logits(2, 3, 3, 30);
  const auto lab = random_labels(18, 31);
  ZLossParams zp;
  zp.a = 2.5, zp.b = -0.5;
  EXPECT_LE(max_rel_fd_error(o, lab, zp, 1e-5), 1e-6);
}

TEST(ZLoss, UniformShiftHasZeroDirectionalDerivative) {
  const auto o = random_logits(2, 4, 4, 40);
  const auto lab = random_labels(32, 41);
  const auto g = zloss_grad<double>(o, lab);
  for (int b = 0; b < 2; ++b) {
    double s = 0;
    for (int c = 0; c < 2; ++c)
      for (double v : g.plane(b, c)) s += v;
    EXPECT_LE(std::abs(s), 1e-10);
  }
}

TEST(ZLoss, FlooredGradientKeepsOnlyTheMeanPath) {
  FeatureMap<double> o(1, 2, 2, 2, 0.3);
  const std::vector<std::uint8_t> lab{0, 1, 1, 0};
  const auto g = zloss_grad<double>(o, lab);
  // Finite differences small enough to stay on the floor (sigma of the probe < 1e-6).
  const double h = 1e-9;
  for (std::size_t i = 0; i < o.size(); ++i) {
    auto p = o, m = o;
    p.values[i] += h, m.values[i] -= h;
    const double num = (zloss<double>(p, lab) - zloss<double>(m, lab)) / (2 * h);
    EXPECT_NEAR(g.values[i], num, 1e-6 * std::max(1.0, std::abs(num)));
  }
  // Mean path alone: dL/do_k = g_k[true]/floor - sum(g)/(M floor).
  const double gi = -sigmoid(1.0) / 4.0;
  const double floor = 1e-6;
  const double expected_true = gi / floor - 4 * gi / (8 * floor);
  EXPECT_NEAR(g.plane(0, 0)[0], expected_true, 1e-6 * std::abs(expected_true));
}

TEST(ZLoss, RejectsBadInputs) {
  FeatureMap<double> o(1, 2, 2, 2);
  EXPECT_THROW(zloss<double>(o, std::vector<std::uint8_t>(3), ZLossParams{}), ShapeError);
  EXPECT_THROW(zloss<double>(o, std::vector<std::uint8_t>{0, 1, 2, 0}, ZLossParams{}), ValidationError);
  ZLossParams bad;
  bad.a = 0;
  EXPECT_THROW(zloss<double>(o, std::vector<std::uint8_t>(4), bad), ParameterError);
  FeatureMap<double> three(1, 3, 2, 2);
  EXPECT_THROW(zloss<double>(three, std::vector<std::uint8_t>(4), ZLossParams{}), ShapeError);
}

TEST(Softplus, StableAtExtremes) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_EQ(softplus(1000.0), 1000.0);
  EXPECT_GT(softplus(-700.0), 0.0);
  EXPECT_NEAR(softplus(-30.0), std::exp(-30.0), 1e-25);
  EXPECT_NEAR(sigmoid(-1000.0), 0.0, 1e-300);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
}

TEST(CrossEntropy, PerfectPredictionIsZero) {
  FeatureMap<double> p(1, 2, 1, 3);
  const std::vector<std::uint8_t> lab{0, 1, 1};
  for (int i = 0; i < 3; ++i) p.plane(0, lab[i])[i] = 1.0;
  EXPECT_EQ(cross_entropy<double>(p, lab).loss, 0.0);
}

TEST(CrossEntropy, UniformPredictionIsLn2) {
  FeatureMap<double> p(2, 2, 2, 2, 0.5);
  EXPECT_NEAR(cross_entropy<double>(p, random_labels(8, 5)).loss, std::log(2.0), 1e-15);
}

TEST(CrossEntropy, MatchesScalarLoopOracle) {
  const auto logits = random_logits(1, 3, 3, 50);
  const auto lab = random_labels(9, 51);
  double want = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    const double a = logits.plane(0, 0)[i], b = logits.plane(0, 1)[i];
    const double pt = std::exp(lab[i] ? b : a) / (std::exp(a) + std::exp(b));
    want -= std::log(pt);
  }
  want /= 9.0;
  EXPECT_NEAR(cross_entropy<double>(softmax_pixelwise(logits), lab).loss, want, 1e-12);
}

TEST(CrossEntropy, ClampsZeroProbability) {
  FeatureMap<double> p(1, 2, 1, 1);
  p.values = {1.0, 0.0};
  const auto r = cross_entropy<double>(p, std::vector<std::uint8_t>{1});
  EXPECT_NEAR(r.loss, -std::log(kProbabilityClamp), 1e-9);
}

TEST(CrossEntropy, LogitGradientMatchesFiniteDifferences) {
  const auto logits = random_logits(2, 3, 3, 60);
  const auto lab = random_labels(18, 61);
  const auto r = evaluate_loss<double>(LossKind::CrossEntropy, logits, lab);
  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto p = logits, m = logits;
    p.values[i] += h, m.values[i] -= h;
    const double num = (evaluate_loss<double>(LossKind::CrossEntropy, p, lab).loss -
                        evaluate_loss<double>(LossKind::CrossEntropy, m, lab).loss) / (2 * h);
    EXPECT_NEAR(r.grad.values[i], num, 1e-8);
  }
}

TEST(EvaluateLoss, DispatchesOnKind) {
  const auto logits = random_logits(1, 2, 2, 70);
  const auto lab = random_labels(4, 71);
  EXPECT_EQ(evaluate_loss<double>(LossKind::ZLoss, logits, lab).loss, zloss<double>(logits, lab));
  EXPECT_EQ(loss_name(LossKind::ZLoss), "zloss");
  EXPECT_EQ(loss_name(LossKind::CrossEntropy), "cross_entropy");
}
