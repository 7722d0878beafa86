#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "cardiacnet/augment.hpp"
#include "cardiacnet/error.hpp"
#include "cardiacnet/loss.hpp"
#include "cardiacnet/network.hpp"
#include "cardiacnet/rng.hpp"
#include "cardiacnet/views.hpp"

namespace cardiacnet {

struct TrainConfig {
  ViewAxis view = ViewAxis::A;
  LossKind loss = LossKind::ZLoss;
  double lr = 0.05;
  double momentum = 0.9;
  int batch = 8;
  int epochs = 1;
  std::uint64_t seed = 1;
  int base_filters = 16;
  ZLossParams zloss;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch < 2) throw ConfigError("batch must be >= 2");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (base_filters < 1) throw ConfigError("base_filters must be >= 1");
    if (!(zloss.a > 0.0)) throw ConfigError("zloss_a must be > 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <typename T>
struct TrainState {
  ArchitectureSpec arch;
  NetworkParams<T> params;
  NetworkParams<T> velocity;  // momentum buffer, same manifest as params
  int epoch = 0;               // completed epochs
};

template <typename T>
TrainState<T> make_train_state(const TrainConfig& cfg) {
  TrainState<T> s;
  s.arch.base_filters = cfg.base_filters;
  s.params = init_params<T>(s.arch, cfg.seed);
  s.velocity = s.params.zeros_like();
  return s;
}

/// v <- momentum * v - lr * g;  p <- p + v  for every trainable tensor.
template <typename T>
void sgd_step(NetworkParams<T>& params, const NetworkParams<T>& grads, double lr, double momentum,
              NetworkParams<T>& velocity) {
  if (grads.tensors.size() != params.tensors.size() || velocity.tensors.size() != params.tensors.size())
    throw ShapeError("sgd_step: gradient/velocity manifest does not match parameters");
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t];
    if (!p.trainable) continue;
    const auto& g = grads.tensors[t].values;
    auto& v = velocity.tensors[t].values;
    if (g.size() != p.values.size() || v.size() != p.values.size())
      throw ShapeError("sgd_step: tensor " + p.name + " shape mismatch");
    const T mom = static_cast<T>(momentum), rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      v[i] = mom * v[i] - rate * g[i];
      p.values[i] += v[i];
    }
  }
  ++params.version;
}

/// Shuffle order for one epoch, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::mix(seed) ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(epoch + 1)));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

template <typename T>
struct Batch {
  FeatureMap<T> images;
  std::vector<std::uint8_t> labels;  // n * h * w, matching the padded images
};

/// Stacks pairs into one padded network batch.
template <typename T>
Batch<T> make_batch(const std::vector<TrainingPair>& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("empty batch");
  const auto& first = data[indices[0]].image;
  FeatureMap<T> raw(static_cast<int>(indices.size()), 1, static_cast<int>(first.height), static_cast<int>(first.width));
  FeatureMap<T> lab(raw.n, 1, raw.h, raw.w);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& pair = data[indices[b]];
    if (pair.image.height != first.height || pair.image.width != first.width || pair.label.height != first.height ||
        pair.label.width != first.width)
      throw ShapeError("all training images in a batch must share dims");
    auto dst = raw.plane(static_cast<int>(b), 0);
    auto ldst = lab.plane(static_cast<int>(b), 0);
    for (std::size_t p = 0; p < dst.size(); ++p) {
      dst[p] = static_cast<T>(pair.image.pixels[p]);
      ldst[p] = static_cast<T>(pair.label.pixels[p]);
    }
  }
  Batch<T> out;
  out.images = pad_to_multiple(raw);
  const auto padded = pad_to_multiple(lab);
  out.labels.resize(padded.size());
  for (std::size_t i = 0; i < padded.size(); ++i) out.labels[i] = padded.values[i] > T{0} ? 1 : 0;
  return out;
}

/// One optimizer step on one batch; returns the batch loss.
template <typename T>
double train_step(TrainState<T>& state, const Batch<T>& batch, const TrainConfig& cfg) {
  auto fwd = forward(state.params, state.arch, batch.images, Mode::Train);
  auto lg = evaluate_loss<T>(cfg.loss, fwd.logits, batch.labels, cfg.zloss);
  auto grads = backward(state.params, state.arch, fwd.cache, lg.grad);
  apply_batch_statistics(state.params, state.arch, fwd.cache);
  sgd_step(state.params, grads, cfg.lr, cfg.momentum, state.velocity);
  return lg.loss;
}

/// One pass over the dataset in seeded shuffled order. A trailing batch of a
/// single sample is dropped (batch norm needs two). Returns the mean batch loss.
template <typename T>
double train_epoch(TrainState<T>& state, const std::vector<TrainingPair>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  if (static_cast<std::size_t>(cfg.batch) > dataset.size())
    throw ConfigError("batch size " + std::to_string(cfg.batch) + " exceeds dataset size " +
                      std::to_string(dataset.size()));
  const auto order = epoch_order(dataset.size(), cfg.seed, state.epoch);
  double total = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
    if (end - start < 2) break;
    const auto batch = make_batch<T>(dataset, std::span<const std::size_t>(order).subspan(start, end - start));
    total += train_step(state, batch, cfg);
    ++batches;
  }
  ++state.epoch;
  return total / batches;
}

/// Foreground probability for each image (infer mode), at the image's own size.
template <typename T>
std::vector<Image> predict_foreground(const NetworkParams<T>& params, const ArchitectureSpec& arch,
                                      const std::vector<Image>& images) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    FeatureMap<T> x(1, 1, static_cast<int>(img.height), static_cast<int>(img.width));
    for (std::size_t p = 0; p < img.size(); ++p) x.values[p] = static_cast<T>(img.pixels[p]);
    const auto fwd = forward(params, arch, pad_to_multiple(x), Mode::Infer, false);
    const auto prob = crop_center(softmax_pixelwise(fwd.logits), x.h, x.w);
    Image fg(img.height, img.width);
    auto plane = prob.plane(0, 1);
    for (std::size_t p = 0; p < fg.size(); ++p) fg.pixels[p] = static_cast<float>(plane[p]);
    out.push_back(std::move(fg));
  }
  return out;
}

struct GradientCheckOptions {
  LossKind loss = LossKind::ZLoss;
  int image_size = 8;
  int batch = 2;
  double step = 1e-3;
  // Relative error is |analytic - numeric| / max(|numeric|, floor).
  double floor = 1e-6;
  // 0 = every trainable coordinate, otherwise a seeded random subsample.
  std::size_t max_coordinates = 0;
  ZLossParams zloss;
  // Test hook: may rewrite the analytic gradients before comparison.
  std::function<void(NetworkParams<double>&)> tamper;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool pass = false;

  friend bool operator==(const GradientCheckReport&, const GradientCheckReport&) = default;
};

/// Analytic parameter gradients of the training loss versus Richardson-
/// extrapolated central differences (steps h and h/2) in double precision,
/// on a seeded random batch. If any probe lands on a different ReLU/pool
/// pattern than the base point the step is shrunk, so no difference quotient
/// straddles a kink.
inline GradientCheckReport gradient_check(const ArchitectureSpec& arch, std::uint64_t seed, double tolerance,
                                          const GradientCheckOptions& opt = {}) {
  auto params = init_params<double>(arch, seed);
  Rng rng(seed ^ 0xA5A5A5A5ULL);
  const int n = opt.batch, s = opt.image_size;
  FeatureMap<double> input(n, arch.in_channels, s, s);
  for (auto& v : input.values) v = rng.normal();
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(n) * s * s);
  for (auto& l : labels) l = rng.uniform() < 0.35 ? 1 : 0;

  const auto loss_at = [&](std::vector<std::uint32_t>* pattern) {
    auto fwd = forward(params, arch, input, Mode::Train);
    if (pattern) *pattern = activation_pattern(fwd.cache);
    return evaluate_loss<double>(opt.loss, fwd.logits, labels, opt.zloss).loss;
  };

  auto base = forward(params, arch, input, Mode::Train);
  const auto base_pattern = activation_pattern(base.cache);
  const auto lg = evaluate_loss<double>(opt.loss, base.logits, labels, opt.zloss);
  auto grads = backward(params, arch, base.cache, lg.grad);
  if (opt.tamper) opt.tamper(grads);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < params.tensors.size(); ++t)
    if (params.tensors[t].trainable)
      for (std::size_t i = 0; i < params.tensors[t].values.size(); ++i) coords.emplace_back(t, i);
  if (opt.max_coordinates > 0 && opt.max_coordinates < coords.size()) {
    rng.shuffle(std::span(coords));
    coords.resize(opt.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  GradientCheckReport report;
  std::vector<std::uint32_t> pattern;
  for (const auto& [t, i] : coords) {
    double& value = params.tensors[t].values[i];
    const double original = value;
    double h = opt.step, numeric = 0.0;
    for (int attempt = 0; attempt < 6; ++attempt, h *= 0.1) {
      bool smooth = true;
      const auto central = [&](double step) {
        value = original + step;
        const double plus = loss_at(&pattern);
        smooth = smooth && pattern == base_pattern;
        value = original - step;
        const double minus = loss_at(&pattern);
        smooth = smooth && pattern == base_pattern;
        return (plus - minus) / (2.0 * step);
      };
      // Richardson: cancels the O(h^2) truncation term of the central difference.
      const double coarse = central(h), fine = central(0.5 * h);
      numeric = (4.0 * fine - coarse) / 3.0;
      if (smooth) break;
    }
    value = original;
    const double analytic = grads.tensors[t].values[i];
    const double err = std::abs(analytic - numeric) / std::max(std::abs(numeric), opt.floor);
    ++report.checked;
    if (err > report.max_relative_error || report.worst_tensor.empty()) {
      report.max_relative_error = err;
      report.worst_tensor = params.tensors[t].name;
      report.worst_index = i;
    }
  }
  report.pass = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace cardiacnet
