#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

inline constexpr std::size_t kHistogramBins = 256;

/// Perona-Malik diffusion with conductance exp(-(d/kappa)^2) on the four
/// nearest-neighbour differences. Out-of-image neighbours mirror the pixel
/// itself, so no flux crosses the border and the mean is conserved.
inline Image anisotropic_diffuse(const Image& input, int iterations, double kappa, double dt) {
  if (iterations < 0) throw ParameterError("diffusion iterations must be >= 0");
  if (!(kappa > 0.0)) throw ParameterError("diffusion kappa must be > 0");
  if (!(dt > 0.0 && dt <= 0.25)) throw ParameterError("diffusion dt must lie in (0, 0.25]");
  if (!all_finite(input.pixels)) throw ValidationError("diffusion input contains non-finite values");
  if (iterations == 0) return input;

  const std::uint32_t h = input.height, w = input.width;
  std::vector<double> cur(input.pixels.begin(), input.pixels.end());
  std::vector<double> next(cur.size());
  const double inv_k2 = 1.0 / (kappa * kappa);
  const auto flux = [inv_k2](double d) { return d * std::exp(-d * d * inv_k2); };

  for (int it = 0; it < iterations; ++it) {
    for (std::uint32_t y = 0; y < h; ++y) {
      for (std::uint32_t x = 0; x < w; ++x) {
        const std::size_t i = x + std::size_t{w} * y;
        const double c = cur[i];
        double sum = 0.0;
        if (x > 0) sum += flux(cur[i - 1] - c);
        if (x + 1 < w) sum += flux(cur[i + 1] - c);
        if (y > 0) sum += flux(cur[i - w] - c);
        if (y + 1 < h) sum += flux(cur[i + w] - c);
        next[i] = c + dt * sum;
      }
    }
    cur.swap(next);
  }
  Image out(h, w);
  for (std::size_t i = 0; i < cur.size(); ++i) out.pixels[i] = static_cast<float>(cur[i]);
  return out;
}

/// Cumulative histogram over 256 unit-width intensity bins; bin k covers
/// [k, k+1), values outside [0, 256) are clamped into the end bins.
struct ReferenceCdf {
  std::array<double, kHistogramBins> cdf{};

  friend bool operator==(const ReferenceCdf&, const ReferenceCdf&) = default;
};

inline std::size_t histogram_bin(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= static_cast<float>(kHistogramBins - 1)) return kHistogramBins - 1;
  return static_cast<std::size_t>(v);
}

inline ReferenceCdf make_reference_cdf(std::span<const float> values) {
  if (values.empty()) throw ValidationError("cannot build a histogram from no values");
  std::array<std::size_t, kHistogramBins> counts{};
  for (float v : values) ++counts[histogram_bin(v)];
  ReferenceCdf ref;
  std::size_t acc = 0;
  for (std::size_t k = 0; k < kHistogramBins; ++k) {
    acc += counts[k];
    ref.cdf[k] = static_cast<double>(acc) / static_cast<double>(values.size());
  }
  ref.cdf.back() = 1.0;
  return ref;
}

inline void validate_reference(const ReferenceCdf& ref) {
  double prev = 0.0;
  for (double c : ref.cdf) {
    if (!(c >= prev) || c > 1.0 + 1e-12) throw ValidationError("reference CDF must be non-decreasing within [0, 1]");
    prev = c;
  }
  if (std::abs(ref.cdf.back() - 1.0) > 1e-9) throw ValidationError("reference CDF must end at 1");
}

/// Maps every value v to the smallest reference bin k with cdf[k] >= F(v),
/// where F is the empirical CDF of the input values themselves. Works on any
/// set of pixels; position plays no role.
inline std::vector<float> histogram_match_values(std::span<const float> values, const ReferenceCdf& ref) {
  validate_reference(ref);
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(values.size());
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto rank = std::upper_bound(sorted.begin(), sorted.end(), values[i]) - sorted.begin();
    const double quantile = static_cast<double>(rank) / n;
    const auto it = std::lower_bound(ref.cdf.begin(), ref.cdf.end(), quantile - 1e-12);
    const auto k = std::min<std::ptrdiff_t>(it - ref.cdf.begin(), kHistogramBins - 1);
    out[i] = static_cast<float>(k);
  }
  return out;
}

inline Image histogram_match(const Image& image, const ReferenceCdf& ref) {
  return Image(image.height, image.width, histogram_match_values(image.pixels, ref));
}

}  // namespace cardiacnet
