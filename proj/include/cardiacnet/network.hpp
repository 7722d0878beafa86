#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/layers.hpp"
#include "cardiacnet/rng.hpp"

namespace cardiacnet {

enum class LayerKind : std::uint8_t { Conv, MaxPool, Upsample };
enum class Section : std::uint8_t { Encoder, Decoder };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  Section section = Section::Encoder;
  int in_channels = 0;
  int out_channels = 0;
  bool batchnorm_relu = false;  // conv followed by batch norm and ReLU
};

struct LayerCensus {
  int encoder_layers = 0;
  int decoder_layers = 0;
  int conv = 0;
  int encoder_conv = 0;
  int decoder_conv = 0;
  int batchnorm = 0;
  int relu = 0;
  int maxpool = 0;
  int upsample = 0;
  int softmax = 0;

  int total_layers() const { return encoder_layers + decoder_layers; }
};

/// Encoder: 3 conv @F, pool, 3 conv @2F, pool, 3 conv @4F.
/// Decoder: up, 3 conv @2F, up, 6 conv @F, final conv @num_classes.
/// Every conv but the final one carries batch norm + ReLU.
struct ArchitectureSpec {
  int base_filters = 16;
  int in_channels = 1;
  int num_classes = 2;

  std::vector<LayerSpec> schedule() const {
    const int f = base_filters;
    std::vector<LayerSpec> s;
    const auto conv = [&s](Section sec, int in, int out, bool bn = true) {
      s.push_back({LayerKind::Conv, sec, in, out, bn});
    };
    const auto enc = Section::Encoder, dec = Section::Decoder;
    conv(enc, in_channels, f), conv(enc, f, f), conv(enc, f, f);
    s.push_back({LayerKind::MaxPool, enc, f, f, false});
    conv(enc, f, 2 * f), conv(enc, 2 * f, 2 * f), conv(enc, 2 * f, 2 * f);
    s.push_back({LayerKind::MaxPool, enc, 2 * f, 2 * f, false});
    conv(enc, 2 * f, 4 * f), conv(enc, 4 * f, 4 * f), conv(enc, 4 * f, 4 * f);

    s.push_back({LayerKind::Upsample, dec, 4 * f, 4 * f, false});
    conv(dec, 4 * f, 2 * f), conv(dec, 2 * f, 2 * f), conv(dec, 2 * f, 2 * f);
    s.push_back({LayerKind::Upsample, dec, 2 * f, 2 * f, false});
    conv(dec, 2 * f, f), conv(dec, f, f), conv(dec, f, f);
    conv(dec, f, f), conv(dec, f, f), conv(dec, f, f);
    conv(dec, f, num_classes, false);
    return s;
  }

  LayerCensus census() const {
    LayerCensus c;
    for (const auto& l : schedule()) {
      (l.section == Section::Encoder ? c.encoder_layers : c.decoder_layers)++;
      switch (l.kind) {
        case LayerKind::Conv:
          ++c.conv;
          (l.section == Section::Encoder ? c.encoder_conv : c.decoder_conv)++;
          if (l.batchnorm_relu) ++c.batchnorm, ++c.relu;
          break;
        case LayerKind::MaxPool: ++c.maxpool; break;
        case LayerKind::Upsample: ++c.upsample; break;
      }
    }
    c.softmax = 1;
    return c;
  }

  // Spatial dims must survive two 2x2 pools.
  static constexpr int kSizeMultiple = 4;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
  bool trainable = true;

  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

// Tensor indices belonging to one schedule entry (-1 where absent).
struct LayerSlots {
  int weight = -1, bias = -1, gamma = -1, beta = -1, running_mean = -1, running_var = -1;
};

/// Ordered parameter blob: per conv weight and bias, per batch norm gamma,
/// beta, running mean and running variance, all in schedule order.
template <typename T>
struct NetworkParams {
  std::vector<ParamTensor<T>> tensors;
  std::vector<LayerSlots> slots;  // one per schedule entry
  std::uint64_t version = 0;      // bumped by every in-place update

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors)
      if (t.trainable) n += t.values.size();
    return n;
  }

  std::span<const T> view(int slot) const { return tensors[static_cast<std::size_t>(slot)].values; }
  std::span<T> view(int slot) { return tensors[static_cast<std::size_t>(slot)].values; }

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    out.slots = slots;
    out.version = version;
    for (const auto& t : tensors)
      out.tensors.push_back({t.name, t.shape, std::vector<U>(t.values.begin(), t.values.end()), t.trainable});
    return out;
  }

  // Same manifest, all values zero.
  NetworkParams zeros_like() const {
    NetworkParams out = *this;
    for (auto& t : out.tensors) std::fill(t.values.begin(), t.values.end(), T{0});
    out.version = 0;
    return out;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    return a.tensors == b.tensors;
  }
};

namespace network_detail {

inline std::string two_digit(int i) { return (i < 10 ? "0" : "") + std::to_string(i); }

}  // namespace network_detail

/// Builds the parameter manifest with zero values.
template <typename T>
NetworkParams<T> make_param_layout(const ArchitectureSpec& arch) {
  NetworkParams<T> p;
  int conv_index = 0, bn_index = 0;
  const auto add = [&p](std::string name, std::vector<int> shape, bool trainable, T fill) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    p.tensors.push_back({std::move(name), std::move(shape), std::vector<T>(n, fill), trainable});
    return static_cast<int>(p.tensors.size() - 1);
  };
  for (const auto& l : arch.schedule()) {
    LayerSlots s;
    if (l.kind == LayerKind::Conv) {
      const std::string c = "conv" + network_detail::two_digit(conv_index++);
      s.weight = add(c + ".weight", {l.out_channels, l.in_channels, 3, 3}, true, T{0});
      s.bias = add(c + ".bias", {l.out_channels}, true, T{0});
      if (l.batchnorm_relu) {
        const std::string b = "bn" + network_detail::two_digit(bn_index++);
        s.gamma = add(b + ".gamma", {l.out_channels}, true, T{1});
        s.beta = add(b + ".beta", {l.out_channels}, true, T{0});
        s.running_mean = add(b + ".running_mean", {l.out_channels}, false, T{0});
        s.running_var = add(b + ".running_var", {l.out_channels}, false, T{1});
      }
    }
    p.slots.push_back(s);
  }
  return p;
}

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, gamma 1, beta 0.
template <typename T>
NetworkParams<T> init_params(const ArchitectureSpec& arch, std::uint64_t seed) {
  auto p = make_param_layout<T>(arch);
  Rng rng(seed);
  for (auto& t : p.tensors) {
    if (t.shape.size() != 4) continue;
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(t.shape[1]) * 9.0));
    for (auto& v : t.values) v = static_cast<T>(rng.normal() * std_dev);
  }
  return p;
}

template <typename T>
ConvKernel<T> kernel_of(const NetworkParams<T>& p, const LayerSpec& l, const LayerSlots& s) {
  return {l.out_channels, l.in_channels, p.view(s.weight), p.view(s.bias)};
}

/// Everything backward needs, per schedule entry.
template <typename T>
struct LayerCache {
  FeatureMap<T> input;
  BatchNormForward<T> bn;          // conv layers with batch norm
  FeatureMap<T> activation;        // post-ReLU output
  std::vector<std::uint32_t> argmax;  // max-pool layers
};

template <typename T>
struct ForwardCache {
  Mode mode = Mode::Infer;
  std::uint64_t params_version = 0;
  const void* params_identity = nullptr;
  std::vector<LayerCache<T>> layers;
};

template <typename T>
struct ForwardResult {
  FeatureMap<T> logits;
  ForwardCache<T> cache;
};

/// Runs the full schedule. Pure: in train mode the batch statistics are left
/// in the cache for the caller to fold into the running estimates.
template <typename T>
ForwardResult<T> forward(const NetworkParams<T>& params, const ArchitectureSpec& arch, const FeatureMap<T>& input,
                         Mode mode, bool keep_cache = true) {
  if (input.h % ArchitectureSpec::kSizeMultiple != 0 || input.w % ArchitectureSpec::kSizeMultiple != 0)
    throw ShapeError("network input must be padded to a multiple of 4, got " + std::to_string(input.h) + "x" +
                     std::to_string(input.w));
  if (input.c != arch.in_channels) throw ShapeError("network input has the wrong channel count");
  const auto schedule = arch.schedule();
  if (params.slots.size() != schedule.size()) throw ShapeError("parameters do not match the architecture");

  ForwardResult<T> r;
  r.cache.mode = mode;
  r.cache.params_version = params.version;
  r.cache.params_identity = &params;
  if (keep_cache) r.cache.layers.resize(schedule.size());

  FeatureMap<T> x = input;
  for (std::size_t li = 0; li < schedule.size(); ++li) {
    const auto& l = schedule[li];
    const auto& s = params.slots[li];
    LayerCache<T>* c = keep_cache ? &r.cache.layers[li] : nullptr;
    switch (l.kind) {
      case LayerKind::Conv: {
        auto y = conv2d(x, kernel_of(params, l, s));
        if (c) c->input = std::move(x);
        if (l.batchnorm_relu) {
          if (mode == Mode::Train) {
            auto bn = batchnorm_train<T>(y, params.view(s.gamma), params.view(s.beta));
            x = relu(bn.output);
            if (c) {
              bn.output = FeatureMap<T>();
              c->bn = std::move(bn);
              c->activation = x;
            }
          } else {
            x = relu(batchnorm_infer<T>(y, params.view(s.gamma), params.view(s.beta), params.view(s.running_mean),
                                        params.view(s.running_var)));
          }
        } else {
          x = std::move(y);
        }
        break;
      }
      case LayerKind::MaxPool: {
        auto pr = maxpool2(x);
        if (c) {
          c->input = std::move(x);
          c->argmax = std::move(pr.argmax);
        }
        x = std::move(pr.output);
        break;
      }
      case LayerKind::Upsample: {
        auto y = upsample2(x);
        if (c) c->input = std::move(x);
        x = std::move(y);
        break;
      }
    }
  }
  r.logits = std::move(x);
  return r;
}

/// Exact gradients of every trainable tensor given dLoss/dLogits. Entries for
/// running statistics stay zero.
template <typename T>
NetworkParams<T> backward(const NetworkParams<T>& params, const ArchitectureSpec& arch, const ForwardCache<T>& cache,
                          const FeatureMap<T>& d_logits) {
  const auto schedule = arch.schedule();
  if (cache.mode != Mode::Train) throw StateError("backward needs a cache from a train-mode forward pass");
  if (cache.params_identity != &params || cache.params_version != params.version ||
      cache.layers.size() != schedule.size())
    throw StateError("forward cache is stale or belongs to different parameters");

  auto grads = params.zeros_like();
  FeatureMap<T> g = d_logits;
  for (std::size_t li = schedule.size(); li-- > 0;) {
    const auto& l = schedule[li];
    const auto& s = params.slots[li];
    const auto& c = cache.layers[li];
    switch (l.kind) {
      case LayerKind::Conv: {
        if (l.batchnorm_relu) {
          g = relu_backward(c.activation, std::move(g));
          g = batchnorm_backward<T>(c.bn, params.view(s.gamma), g, grads.view(s.gamma), grads.view(s.beta));
        }
        g = conv2d_backward(c.input, kernel_of(params, l, s), g, grads.view(s.weight), grads.view(s.bias), li > 0);
        break;
      }
      case LayerKind::MaxPool:
        g = maxpool2_backward<T>(g, c.argmax, c.input.h, c.input.w);
        break;
      case LayerKind::Upsample:
        g = upsample2_backward(g);
        break;
    }
  }
  return grads;
}

/// Folds the batch statistics of a train-mode pass into the running estimates.
template <typename T>
void apply_batch_statistics(NetworkParams<T>& params, const ArchitectureSpec& arch, const ForwardCache<T>& cache,
                            double momentum = kBatchNormMomentum) {
  const auto schedule = arch.schedule();
  for (std::size_t li = 0; li < schedule.size(); ++li) {
    const auto& s = params.slots[li];
    if (s.gamma < 0) continue;
    const auto& bn = cache.layers[li].bn;
    update_running_stats<T>(params.view(s.running_mean), params.view(s.running_var), bn.batch_mean, bn.batch_var,
                            momentum);
  }
  ++params.version;
}

/// ReLU on/off pattern and pool switches of a train-mode pass; two passes
/// with equal patterns lie on the same smooth piece of the network function.
template <typename T>
std::vector<std::uint32_t> activation_pattern(const ForwardCache<T>& cache) {
  std::vector<std::uint32_t> out;
  for (const auto& c : cache.layers) {
    for (T v : c.activation.values) out.push_back(v > T{0} ? 1u : 0u);
    out.insert(out.end(), c.argmax.begin(), c.argmax.end());
  }
  return out;
}

/// Zero-pads symmetrically so both dims become multiples of 4.
template <typename T>
FeatureMap<T> pad_to_multiple(const FeatureMap<T>& in, int multiple = ArchitectureSpec::kSizeMultiple) {
  const int h = (in.h + multiple - 1) / multiple * multiple, w = (in.w + multiple - 1) / multiple * multiple;
  if (h == in.h && w == in.w) return in;
  const int top = (h - in.h) / 2, left = (w - in.w) / 2;
  FeatureMap<T> out(in.n, in.c, h, w);
  for (int b = 0; b < in.n; ++b)
    for (int ch = 0; ch < in.c; ++ch)
      for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) out.at(b, ch, y + top, x + left) = in.at(b, ch, y, x);
  return out;
}

template <typename T>
FeatureMap<T> crop_center(const FeatureMap<T>& in, int h, int w) {
  if (h == in.h && w == in.w) return in;
  const int top = (in.h - h) / 2, left = (in.w - w) / 2;
  FeatureMap<T> out(in.n, in.c, h, w);
  for (int b = 0; b < in.n; ++b)
    for (int ch = 0; ch < in.c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(b, ch, y, x) = in.at(b, ch, y + top, x + left);
  return out;
}

}  // namespace cardiacnet
