#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cardiacnet/augment.hpp"
#include "cardiacnet/error.hpp"
#include "cardiacnet/fusion.hpp"
#include "cardiacnet/network.hpp"
#include "cardiacnet/preprocess.hpp"
#include "cardiacnet/train.hpp"
#include "cardiacnet/views.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

struct PreprocessConfig {
  int diffusion_iterations = 5;
  double diffusion_kappa = 30.0;
  double diffusion_dt = 0.2;
  bool histogram_match = true;
  // Network input = matched intensity / intensity_scale.
  double intensity_scale = 255.0;

  void validate() const {
    if (diffusion_iterations < 0) throw ConfigError("diffusion_iterations must be >= 0");
    if (!(diffusion_kappa > 0.0)) throw ConfigError("diffusion_kappa must be > 0");
    if (!(diffusion_dt > 0.0 && diffusion_dt <= 0.25)) throw ConfigError("diffusion_dt must lie in (0, 0.25]");
    if (!(intensity_scale > 0.0)) throw ConfigError("intensity_scale must be > 0");
  }

  friend bool operator==(const PreprocessConfig&, const PreprocessConfig&) = default;
};

/// Parses the volume into one view and smooths every slice.
inline SliceStack<float> diffused_view(const Volume3D& volume, ViewAxis view, const PreprocessConfig& cfg) {
  auto stack = parse_view(volume, view);
  for (auto& s : stack.slices)
    s = anisotropic_diffuse(s, cfg.diffusion_iterations, cfg.diffusion_kappa, cfg.diffusion_dt);
  return stack;
}

/// Reference histogram of one (training) volume seen through one view.
inline ReferenceCdf reference_for_view(const Volume3D& volume, ViewAxis view, const PreprocessConfig& cfg) {
  const auto stack = diffused_view(volume, view, cfg);
  std::vector<float> all;
  all.reserve(volume.size());
  for (const auto& s : stack.slices) all.insert(all.end(), s.pixels.begin(), s.pixels.end());
  return make_reference_cdf(all);
}

/// Network-ready slices: smoothing, histogram matching of the whole stack
/// against the reference (so empty slices keep their background level), and
/// scaling.
inline SliceStack<float> preprocess_view(const Volume3D& volume, ViewAxis view, const PreprocessConfig& cfg,
                                         const ReferenceCdf& reference) {
  auto stack = diffused_view(volume, view, cfg);
  const std::size_t per = std::size_t{stack.height} * stack.width;
  std::vector<float> all;
  all.reserve(per * stack.count());
  for (const auto& s : stack.slices) all.insert(all.end(), s.pixels.begin(), s.pixels.end());
  if (cfg.histogram_match) all = histogram_match_values(all, reference);
  const float inv = static_cast<float>(1.0 / cfg.intensity_scale);
  for (std::size_t k = 0; k < stack.count(); ++k)
    for (std::size_t p = 0; p < per; ++p) stack.slices[k].pixels[p] = all[k * per + p] * inv;
  return stack;
}

/// (image, label) slice pairs of one view for a set of volumes.
inline std::vector<TrainingPair> view_training_pairs(const std::vector<Volume3D>& images,
                                                     const std::vector<LabelVolume>& labels, ViewAxis view,
                                                     const PreprocessConfig& cfg, const ReferenceCdf& reference) {
  if (images.size() != labels.size()) throw ShapeError("image and label counts differ");
  std::vector<TrainingPair> out;
  for (std::size_t v = 0; v < images.size(); ++v) {
    if (images[v].dims() != labels[v].dims()) throw ShapeError("image and label dims differ");
    auto img = preprocess_view(images[v], view, cfg, reference);
    auto lab = parse_view(labels[v], view);
    for (std::size_t s = 0; s < img.count(); ++s) out.push_back({std::move(img.slices[s]), std::move(lab.slices[s])});
  }
  return out;
}

/// Per-view foreground probability volume: preprocess, pad, forward, softmax,
/// crop, restack.
template <typename T>
Volume3D predict_view(const NetworkParams<T>& params, const ArchitectureSpec& arch, const Volume3D& volume,
                      ViewAxis view, const PreprocessConfig& cfg, const ReferenceCdf& reference) {
  auto stack = preprocess_view(volume, view, cfg, reference);
  auto probs = predict_foreground(params, arch, stack.slices);
  stack.slices = std::move(probs);
  return restack_view(stack);
}

}  // namespace cardiacnet
