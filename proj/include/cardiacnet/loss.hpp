#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/layers.hpp"

namespace cardiacnet {

/// z-loss: per image, the two-channel logit map o is z-normalized with its
/// own mean and population standard deviation (floored at sigma_floor); each
/// pixel contributes softplus(a * (b - z_true)) / a.
struct ZLossParams {
  double a = 1.0;
  double b = 1.0;
  double sigma_floor = 1e-6;

  friend bool operator==(const ZLossParams&, const ZLossParams&) = default;
};

enum class LossKind : std::uint8_t { ZLoss, CrossEntropy };

inline std::string loss_name(LossKind k) { return k == LossKind::ZLoss ? "zloss" : "cross_entropy"; }

// ln(1 + e^x) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace loss_detail {

template <typename T>
void check_inputs(const FeatureMap<T>& logits, std::span<const std::uint8_t> labels) {
  if (logits.c != 2) throw ShapeError("loss expects a two-channel map");
  if (labels.size() != static_cast<std::size_t>(logits.n) * logits.plane_size())
    throw ShapeError("label count does not match the logit map");
  for (auto l : labels)
    if (l > 1) throw ValidationError("labels must be binary");
}

struct ImageStats {
  double mean = 0.0;
  double sigma = 1.0;
  bool floored = false;
};

template <typename T>
ImageStats stats(const FeatureMap<T>& o, int b, double floor) {
  const std::size_t m = 2 * o.plane_size();
  double sum = 0.0;
  for (int ch = 0; ch < 2; ++ch)
    for (T v : o.plane(b, ch)) sum += v;
  const double mean = sum / static_cast<double>(m);
  double sq = 0.0;
  for (int ch = 0; ch < 2; ++ch)
    for (T v : o.plane(b, ch)) sq += (v - mean) * (v - mean);
  const double sigma = std::sqrt(sq / static_cast<double>(m));
  return sigma > floor ? ImageStats{mean, sigma, false} : ImageStats{mean, floor, true};
}

}  // namespace loss_detail

/// Mean over images of the per-image mean pixel loss. When grad is non-null it
/// receives dLoss/dlogits, including the paths through the shared mean and
/// standard deviation.
template <typename T>
double zloss_impl(const FeatureMap<T>& logits, std::span<const std::uint8_t> labels, const ZLossParams& zp,
                  FeatureMap<T>* grad) {
  loss_detail::check_inputs(logits, labels);
  if (!(zp.a > 0.0)) throw ParameterError("z-loss sharpness a must be > 0");
  if (!(zp.sigma_floor > 0.0)) throw ParameterError("z-loss sigma floor must be > 0");
  if (grad) *grad = FeatureMap<T>(logits.n, logits.c, logits.h, logits.w);

  const std::size_t pixels = logits.plane_size();
  const double m = 2.0 * static_cast<double>(pixels);
  double total = 0.0;
  for (int b = 0; b < logits.n; ++b) {
    const auto st = loss_detail::stats(logits, b, zp.sigma_floor);
    const auto lab = labels.subspan(static_cast<std::size_t>(b) * pixels, pixels);
    double image_loss = 0.0, sum_g = 0.0, sum_gz = 0.0;
    // g_i = dL/dz_i for the pixel's true-class z.
    std::vector<double> g(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double z = (logits.plane(b, lab[p])[p] - st.mean) / st.sigma;
      const double u = zp.a * (zp.b - z);
      image_loss += softplus(u) / zp.a;
      g[p] = -sigmoid(u) / static_cast<double>(pixels) / static_cast<double>(logits.n);
      sum_g += g[p];
      sum_gz += g[p] * z;
    }
    total += image_loss / static_cast<double>(pixels);
    if (!grad) continue;
    // dz_i/do_k = (delta_ik - 1/M) / sigma - z_i (o_k - mu) / (M sigma^2); the
    // sigma term vanishes when sigma sits on its floor.
    const double shared = -sum_g / (m * st.sigma);
    const double spread = st.floored ? 0.0 : -sum_gz / (m * st.sigma * st.sigma);
    for (int ch = 0; ch < 2; ++ch) {
      auto src = logits.plane(b, ch);
      auto dst = grad->plane(b, ch);
      for (std::size_t p = 0; p < pixels; ++p) {
        double d = shared + spread * (src[p] - st.mean);
        if (lab[p] == ch) d += g[p] / st.sigma;
        dst[p] = static_cast<T>(d);
      }
    }
  }
  return total / static_cast<double>(logits.n);
}

template <typename T>
double zloss(const FeatureMap<T>& logits, std::span<const std::uint8_t> labels, const ZLossParams& zp = {}) {
  return zloss_impl<T>(logits, labels, zp, nullptr);
}

template <typename T>
FeatureMap<T> zloss_grad(const FeatureMap<T>& logits, std::span<const std::uint8_t> labels,
                         const ZLossParams& zp = {}) {
  FeatureMap<T> g;
  zloss_impl<T>(logits, labels, zp, &g);
  return g;
}

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  FeatureMap<T> grad;  // with respect to logits
};

inline constexpr double kProbabilityClamp = 1e-12;

/// Mean over all pixels of -ln p_true on softmax probabilities; the gradient
/// with respect to the logits is (p - onehot) / pixel_count.
template <typename T>
LossAndGrad<T> cross_entropy(const FeatureMap<T>& probabilities, std::span<const std::uint8_t> labels) {
  loss_detail::check_inputs(probabilities, labels);
  LossAndGrad<T> r;
  r.grad = probabilities;
  const std::size_t pixels = probabilities.plane_size();
  const double count = static_cast<double>(pixels) * probabilities.n;
  double total = 0.0;
  for (int b = 0; b < probabilities.n; ++b) {
    for (std::size_t p = 0; p < pixels; ++p) {
      const int truth = labels[static_cast<std::size_t>(b) * pixels + p];
      total -= std::log(std::max<double>(probabilities.plane(b, truth)[p], kProbabilityClamp));
      for (int ch = 0; ch < 2; ++ch) {
        const double onehot = ch == truth ? 1.0 : 0.0;
        r.grad.plane(b, ch)[p] = static_cast<T>((probabilities.plane(b, ch)[p] - onehot) / count);
      }
    }
  }
  r.loss = total / count;
  return r;
}

/// Loss and dLoss/dlogits for either training head.
template <typename T>
LossAndGrad<T> evaluate_loss(LossKind kind, const FeatureMap<T>& logits, std::span<const std::uint8_t> labels,
                             const ZLossParams& zp = {}) {
  if (kind == LossKind::CrossEntropy) return cross_entropy(softmax_pixelwise(logits), labels);
  LossAndGrad<T> r;
  r.loss = zloss_impl<T>(logits, labels, zp, &r.grad);
  return r;
}

}  // namespace cardiacnet
