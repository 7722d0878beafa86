#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/parallel.hpp"

namespace cardiacnet {

/// A batch of n feature maps, each c x h x w, stored NCHW.
template <typename T>
struct FeatureMap {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> values;

  FeatureMap() = default;
  FeatureMap(int batch, int channels, int height, int width, T fill = T{})
      : n(batch), c(channels), h(height), w(width),
        values(static_cast<std::size_t>(batch) * channels * height * width, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  std::size_t size() const { return values.size(); }

  std::span<T> plane(int b, int ch) {
    return {values.data() + (static_cast<std::size_t>(b) * c + ch) * plane_size(), plane_size()};
  }
  std::span<const T> plane(int b, int ch) const {
    return {values.data() + (static_cast<std::size_t>(b) * c + ch) * plane_size(), plane_size()};
  }

  T& at(int b, int ch, int y, int x) { return values[(static_cast<std::size_t>(b) * c + ch) * plane_size() + y * w + x]; }
  const T& at(int b, int ch, int y, int x) const {
    return values[(static_cast<std::size_t>(b) * c + ch) * plane_size() + y * w + x];
  }

  bool same_shape(const FeatureMap& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// Non-owning view of a 3x3 convolution's parameters: weights laid out
/// [out][in][ky][kx], one bias per output channel.
template <typename T>
struct ConvKernel {
  int out_channels = 0;
  int in_channels = 0;
  std::span<const T> weights;
  std::span<const T> bias;
};

namespace layers_detail {

// out[y][x] += k * in[y+dy][x+dx] over the rows/columns where both exist.
template <typename T>
inline void shift_accumulate(T* out, const T* in, T k, int h, int w, int dy, int dx) {
  const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
  const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
  for (int y = y0; y < y1; ++y) {
    T* o = out + y * w;
    const T* s = in + (y + dy) * w + dx;
#pragma omp simd
    for (int x = x0; x < x1; ++x) o[x] += k * s[x];
  }
}

template <typename T>
inline T shifted_dot(const T* a, const T* b, int h, int w, int dy, int dx) {
  const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
  const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
  T acc = 0;
  for (int y = y0; y < y1; ++y) {
    const T* pa = a + y * w;
    const T* pb = b + (y + dy) * w + dx;
    T row = 0;
#pragma omp simd reduction(+ : row)
    for (int x = x0; x < x1; ++x) row += pa[x] * pb[x];
    acc += row;
  }
  return acc;
}

}  // namespace layers_detail

/// 3x3 cross-correlation, stride 1, zero padding 1.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& input, const ConvKernel<T>& k) {
  if (input.c != k.in_channels)
    throw ShapeError("conv2d expects " + std::to_string(k.in_channels) + " input channels, got " +
                     std::to_string(input.c));
  if (k.weights.size() != static_cast<std::size_t>(k.out_channels) * k.in_channels * 9 ||
      k.bias.size() != static_cast<std::size_t>(k.out_channels))
    throw ShapeError("conv2d kernel storage does not match its channel counts");

  FeatureMap<T> out(input.n, k.out_channels, input.h, input.w);
  const int jobs = input.n * k.out_channels;
  parallel_for(static_cast<std::size_t>(jobs), [&](std::size_t job) {
    const int b = static_cast<int>(job) / k.out_channels, o = static_cast<int>(job) % k.out_channels;
    auto dst = out.plane(b, o);
    std::fill(dst.begin(), dst.end(), k.bias[o]);
    for (int i = 0; i < k.in_channels; ++i) {
      const T* src = input.plane(b, i).data();
      const T* wk = k.weights.data() + (static_cast<std::size_t>(o) * k.in_channels + i) * 9;
      for (int t = 0; t < 9; ++t)
        if (wk[t] != T{0}) layers_detail::shift_accumulate(dst.data(), src, wk[t], input.h, input.w, t / 3 - 1, t % 3 - 1);
    }
  }, 4);
  return out;
}

/// Backward of conv2d. Parameter gradients are accumulated into d_weights /
/// d_bias; the input gradient is returned (skipped when want_input is false).
template <typename T>
FeatureMap<T> conv2d_backward(const FeatureMap<T>& input, const ConvKernel<T>& k, const FeatureMap<T>& d_out,
                              std::span<T> d_weights, std::span<T> d_bias, bool want_input = true) {
  if (d_out.n != input.n || d_out.c != k.out_channels || d_out.h != input.h || d_out.w != input.w)
    throw ShapeError("conv2d_backward: upstream gradient shape mismatch");
  const int h = input.h, w = input.w;

  // Weight/bias gradients: each output channel owns its slice.
  parallel_for(static_cast<std::size_t>(k.out_channels), [&](std::size_t oo) {
    const int o = static_cast<int>(oo);
    T db = 0;
    for (int b = 0; b < input.n; ++b)
      for (T v : d_out.plane(b, o)) db += v;
    d_bias[o] += db;
    for (int i = 0; i < k.in_channels; ++i) {
      T* dw = d_weights.data() + (static_cast<std::size_t>(o) * k.in_channels + i) * 9;
      for (int t = 0; t < 9; ++t) {
        T acc = 0;
        for (int b = 0; b < input.n; ++b)
          acc += layers_detail::shifted_dot(d_out.plane(b, o).data(), input.plane(b, i).data(), h, w, t / 3 - 1,
                                            t % 3 - 1);
        dw[t] += acc;
      }
    }
  });

  FeatureMap<T> d_in;
  if (!want_input) return d_in;
  d_in = FeatureMap<T>(input.n, input.c, h, w);
  // d_in[i][y+dy][x+dx] += w * d_out[o][y][x]; the adjoint shift is (-dy, -dx).
  const int jobs = input.n * k.in_channels;
  parallel_for(static_cast<std::size_t>(jobs), [&](std::size_t job) {
    const int b = static_cast<int>(job) / k.in_channels, i = static_cast<int>(job) % k.in_channels;
    T* dst = d_in.plane(b, i).data();
    for (int o = 0; o < k.out_channels; ++o) {
      const T* g = d_out.plane(b, o).data();
      const T* wk = k.weights.data() + (static_cast<std::size_t>(o) * k.in_channels + i) * 9;
      for (int t = 0; t < 9; ++t)
        if (wk[t] != T{0}) layers_detail::shift_accumulate(dst, g, wk[t], h, w, -(t / 3 - 1), -(t % 3 - 1));
    }
  }, 4);
  return d_in;
}

template <typename T>
struct PoolResult {
  FeatureMap<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 max pooling, stride 2. Ties resolve to the first element in
/// row-major window order.
template <typename T>
PoolResult<T> maxpool2(const FeatureMap<T>& input) {
  if (input.h % 2 != 0 || input.w % 2 != 0)
    throw ShapeError("maxpool2 needs even spatial dims, got " + std::to_string(input.h) + "x" + std::to_string(input.w));
  PoolResult<T> r;
  r.output = FeatureMap<T>(input.n, input.c, input.h / 2, input.w / 2);
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (int b = 0; b < input.n; ++b) {
    for (int ch = 0; ch < input.c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * input.c + ch) * input.plane_size();
      for (int y = 0; y < input.h / 2; ++y) {
        for (int x = 0; x < input.w / 2; ++x, ++o) {
          std::size_t best = base + static_cast<std::size_t>(2 * y) * input.w + 2 * x;
          for (std::size_t cand : {best + 1, best + input.w, best + input.w + 1})
            if (input.values[cand] > input.values[best]) best = cand;
          r.output.values[o] = input.values[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

template <typename T>
FeatureMap<T> maxpool2_backward(const FeatureMap<T>& d_out, std::span<const std::uint32_t> argmax, int in_h, int in_w) {
  FeatureMap<T> d_in(d_out.n, d_out.c, in_h, in_w);
  for (std::size_t o = 0; o < d_out.size(); ++o) d_in.values[argmax[o]] += d_out.values[o];
  return d_in;
}

/// Nearest-neighbour x2: each pixel becomes a 2x2 block.
template <typename T>
FeatureMap<T> upsample2(const FeatureMap<T>& input) {
  FeatureMap<T> out(input.n, input.c, input.h * 2, input.w * 2);
  for (int b = 0; b < input.n; ++b)
    for (int ch = 0; ch < input.c; ++ch) {
      auto src = input.plane(b, ch);
      auto dst = out.plane(b, ch);
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) dst[y * out.w + x] = src[(y / 2) * input.w + x / 2];
    }
  return out;
}

template <typename T>
FeatureMap<T> upsample2_backward(const FeatureMap<T>& d_out) {
  FeatureMap<T> d_in(d_out.n, d_out.c, d_out.h / 2, d_out.w / 2);
  for (int b = 0; b < d_out.n; ++b)
    for (int ch = 0; ch < d_out.c; ++ch) {
      auto src = d_out.plane(b, ch);
      auto dst = d_in.plane(b, ch);
      for (int y = 0; y < d_out.h; ++y)
        for (int x = 0; x < d_out.w; ++x) dst[(y / 2) * d_in.w + x / 2] += src[y * d_out.w + x];
    }
  return d_in;
}

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

enum class Mode : std::uint8_t { Train, Infer };

template <typename T>
struct BatchNormForward {
  FeatureMap<T> output;
  FeatureMap<T> normalized;   // x-hat, kept for backward
  std::vector<T> batch_mean;  // per channel
  std::vector<T> batch_var;   // population variance per channel
  std::vector<T> inv_std;
};

/// Training-mode normalization with statistics over (batch, height, width).
template <typename T>
BatchNormForward<T> batchnorm_train(const FeatureMap<T>& input, std::span<const T> gamma, std::span<const T> beta) {
  if (input.n < 2) throw ValidationError("batch norm in train mode needs a batch of at least 2");
  if (gamma.size() != static_cast<std::size_t>(input.c) || beta.size() != gamma.size())
    throw ShapeError("batch norm parameters do not match channel count");
  BatchNormForward<T> r;
  r.output = FeatureMap<T>(input.n, input.c, input.h, input.w);
  r.normalized = r.output;
  r.batch_mean.resize(input.c);
  r.batch_var.resize(input.c);
  r.inv_std.resize(input.c);
  const double count = static_cast<double>(input.n) * input.plane_size();
  parallel_for(static_cast<std::size_t>(input.c), [&](std::size_t cc) {
    const int ch = static_cast<int>(cc);
    double sum = 0.0;
    for (int b = 0; b < input.n; ++b)
      for (T v : input.plane(b, ch)) sum += v;
    const double mean = sum / count;
    double sq = 0.0;
    for (int b = 0; b < input.n; ++b)
      for (T v : input.plane(b, ch)) sq += (v - mean) * (v - mean);
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    r.batch_mean[ch] = static_cast<T>(mean);
    r.batch_var[ch] = static_cast<T>(var);
    r.inv_std[ch] = static_cast<T>(inv);
    for (int b = 0; b < input.n; ++b) {
      auto src = input.plane(b, ch);
      auto xh = r.normalized.plane(b, ch);
      auto dst = r.output.plane(b, ch);
      for (std::size_t p = 0; p < src.size(); ++p) {
        xh[p] = static_cast<T>((src[p] - mean) * inv);
        dst[p] = gamma[ch] * xh[p] + beta[ch];
      }
    }
  });
  return r;
}

template <typename T>
FeatureMap<T> batchnorm_infer(const FeatureMap<T>& input, std::span<const T> gamma, std::span<const T> beta,
                              std::span<const T> running_mean, std::span<const T> running_var) {
  if (gamma.size() != static_cast<std::size_t>(input.c)) throw ShapeError("batch norm parameters do not match channel count");
  FeatureMap<T> out(input.n, input.c, input.h, input.w);
  for (int ch = 0; ch < input.c; ++ch) {
    const T scale = static_cast<T>(gamma[ch] / std::sqrt(static_cast<double>(running_var[ch]) + kBatchNormEpsilon));
    const T shift = beta[ch] - scale * running_mean[ch];
    for (int b = 0; b < input.n; ++b) {
      auto src = input.plane(b, ch);
      auto dst = out.plane(b, ch);
      for (std::size_t p = 0; p < src.size(); ++p) dst[p] = scale * src[p] + shift;
    }
  }
  return out;
}

/// Exact train-mode backward, including the paths through the batch mean and
/// variance. Accumulates into d_gamma / d_beta and returns the input gradient.
template <typename T>
FeatureMap<T> batchnorm_backward(const BatchNormForward<T>& fwd, std::span<const T> gamma, const FeatureMap<T>& d_out,
                                 std::span<T> d_gamma, std::span<T> d_beta) {
  const auto& xh = fwd.normalized;
  FeatureMap<T> d_in(xh.n, xh.c, xh.h, xh.w);
  const double count = static_cast<double>(xh.n) * xh.plane_size();
  parallel_for(static_cast<std::size_t>(xh.c), [&](std::size_t cc) {
    const int ch = static_cast<int>(cc);
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int b = 0; b < xh.n; ++b) {
      auto g = d_out.plane(b, ch);
      auto x = xh.plane(b, ch);
      for (std::size_t p = 0; p < g.size(); ++p) {
        sum_dy += g[p];
        sum_dy_xh += static_cast<double>(g[p]) * x[p];
      }
    }
    d_gamma[ch] += static_cast<T>(sum_dy_xh);
    d_beta[ch] += static_cast<T>(sum_dy);
    const double mean_dy = sum_dy / count, mean_dy_xh = sum_dy_xh / count;
    const double scale = static_cast<double>(gamma[ch]) * fwd.inv_std[ch];
    for (int b = 0; b < xh.n; ++b) {
      auto g = d_out.plane(b, ch);
      auto x = xh.plane(b, ch);
      auto dst = d_in.plane(b, ch);
      for (std::size_t p = 0; p < g.size(); ++p)
        dst[p] = static_cast<T>(scale * (g[p] - mean_dy - x[p] * mean_dy_xh));
    }
  });
  return d_in;
}

/// running <- momentum * running + (1 - momentum) * batch.
template <typename T>
void update_running_stats(std::span<T> running_mean, std::span<T> running_var, std::span<const T> batch_mean,
                          std::span<const T> batch_var, double momentum = kBatchNormMomentum) {
  for (std::size_t ch = 0; ch < running_mean.size(); ++ch) {
    running_mean[ch] = static_cast<T>(momentum * running_mean[ch] + (1.0 - momentum) * batch_mean[ch]);
    running_var[ch] = static_cast<T>(momentum * running_var[ch] + (1.0 - momentum) * batch_var[ch]);
  }
}

/// Stateful convenience form: train mode normalizes with batch statistics
/// and folds them into the running estimates; infer mode reads them.
template <typename T>
FeatureMap<T> batchnorm(const FeatureMap<T>& input, std::span<const T> gamma, std::span<const T> beta,
                        std::span<T> running_mean, std::span<T> running_var, Mode mode,
                        double momentum = kBatchNormMomentum) {
  if (mode == Mode::Infer)
    return batchnorm_infer<T>(input, gamma, beta, running_mean, running_var);
  auto fwd = batchnorm_train(input, gamma, beta);
  update_running_stats<T>(running_mean, running_var, fwd.batch_mean, fwd.batch_var, momentum);
  return std::move(fwd.output);
}

template <typename T>
FeatureMap<T> relu(FeatureMap<T> input) {
  for (auto& v : input.values) v = v > T{0} ? v : T{0};
  return input;
}

// Gradient passes where the forward output was positive.
template <typename T>
FeatureMap<T> relu_backward(const FeatureMap<T>& output, FeatureMap<T> d_out) {
  for (std::size_t i = 0; i < d_out.size(); ++i)
    if (!(output.values[i] > T{0})) d_out.values[i] = T{0};
  return d_out;
}

/// Per-pixel softmax over channels, max-subtracted.
template <typename T>
FeatureMap<T> softmax_pixelwise(const FeatureMap<T>& logits) {
  FeatureMap<T> out(logits.n, logits.c, logits.h, logits.w);
  const std::size_t ps = logits.plane_size();
  for (int b = 0; b < logits.n; ++b) {
    for (std::size_t p = 0; p < ps; ++p) {
      double mx = -INFINITY;
      for (int ch = 0; ch < logits.c; ++ch) mx = std::max<double>(mx, logits.plane(b, ch)[p]);
      double sum = 0.0;
      for (int ch = 0; ch < logits.c; ++ch) sum += std::exp(static_cast<double>(logits.plane(b, ch)[p]) - mx);
      for (int ch = 0; ch < logits.c; ++ch)
        out.plane(b, ch)[p] = static_cast<T>(std::exp(static_cast<double>(logits.plane(b, ch)[p]) - mx) / sum);
    }
  }
  return out;
}

}  // namespace cardiacnet
