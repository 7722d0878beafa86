#pragma once

// Batch commands behind the `cardiacnet` executable. Each cmd_* function
// returns a process exit code and reports problems on `err`; library
// exceptions never escape.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cardiacnet/augment.hpp"
#include "cardiacnet/checkpoint.hpp"
#include "cardiacnet/config.hpp"
#include "cardiacnet/cvol.hpp"
#include "cardiacnet/error.hpp"
#include "cardiacnet/fusion.hpp"
#include "cardiacnet/metrics.hpp"
#include "cardiacnet/phantom.hpp"
#include "cardiacnet/pipeline.hpp"
#include "cardiacnet/rng.hpp"
#include "cardiacnet/train.hpp"
#include "cardiacnet/views.hpp"

namespace cardiacnet {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitUnpaired = 4,
  kExitDivergence = 5,
  kExitDims = 6,
  kExitEmptyMask = 7,
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) || dynamic_cast<const LengthError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e))
    return kExitIo;
  if (dynamic_cast<const PairingError*>(&e)) return kExitUnpaired;
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  if (dynamic_cast<const ShapeError*>(&e)) return kExitDims;
  if (dynamic_cast<const UndefinedMetricError*>(&e)) return kExitEmptyMask;
  return kExitFailure;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

// ---------------------------------------------------------------- datasets

inline std::string phantom_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%03d", index);
  return buf;
}

inline std::uint64_t phantom_seed(std::uint64_t seed, int index) {
  return Rng::mix(seed) + static_cast<std::uint64_t>(index);
}

struct DataPair {
  std::string stem;
  std::filesystem::path image;
  std::filesystem::path label;
};

/// `<stem>_img.cvl` / `<stem>_lbl.cvl` pairs in a directory, sorted by stem.
inline std::vector<DataPair> find_data_pairs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("data directory " + dir.string() + " does not exist");
  std::map<std::string, DataPair> by_stem;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const auto ends = [&](const std::string& suffix) {
      return name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends("_img.cvl")) {
      auto& p = by_stem[name.substr(0, name.size() - 8)];
      p.image = entry.path();
    } else if (ends("_lbl.cvl")) {
      auto& p = by_stem[name.substr(0, name.size() - 8)];
      p.label = entry.path();
    }
  }
  std::vector<DataPair> out;
  for (auto& [stem, p] : by_stem) {
    if (p.image.empty()) throw PairingError("label " + p.label.string() + " has no matching image");
    if (p.label.empty()) throw PairingError("image " + p.image.string() + " has no matching label");
    p.stem = stem;
    out.push_back(p);
  }
  if (out.empty()) throw PairingError("no image/label pairs in " + dir.string());
  return out;
}

// ---------------------------------------------------------------- training

/// Slice pairs of one view, after subsampling and augmentation.
inline std::vector<TrainingPair> build_view_dataset(const std::vector<Volume3D>& images,
                                                    const std::vector<LabelVolume>& labels,
                                                    const TrainSettings& settings, const ReferenceCdf& reference) {
  std::vector<TrainingPair> kept;
  for (std::size_t v = 0; v < images.size(); ++v) {
    auto pairs = view_training_pairs({images[v]}, {labels[v]}, settings.train.view, settings.preprocess, reference);
    for (std::size_t s = 0; s < pairs.size(); s += static_cast<std::size_t>(settings.slice_stride)) {
      if (settings.skip_empty_slices &&
          std::none_of(pairs[s].label.pixels.begin(), pairs[s].label.pixels.end(), [](std::uint8_t l) { return l != 0; }))
        continue;
      kept.push_back(std::move(pairs[s]));
    }
  }
  if (!settings.augment) return kept;
  return expand_dataset(kept, default_augment_plan());
}

/// Trains one view network from scratch. `on_epoch(epoch, loss)` is called
/// after every epoch.
inline Checkpoint train_view(const std::vector<Volume3D>& images, const std::vector<LabelVolume>& labels,
                             const TrainSettings& settings,
                             const std::function<void(int, double)>& on_epoch = {}) {
  settings.validate();
  if (images.empty() || images.size() != labels.size()) throw PairingError("training needs matched image/label volumes");
  const Dims dims = images.front().dims();
  for (std::size_t v = 0; v < images.size(); ++v) {
    if (images[v].dims() != dims || labels[v].dims() != dims)
      throw ShapeError("training volumes must share dims " + to_string(dims));
    if (!all_finite(images[v].voxels())) throw DivergenceError("training volume " + std::to_string(v) + " holds non-finite values");
  }
  const auto reference = reference_for_view(images.front(), settings.train.view, settings.preprocess);
  const auto dataset = build_view_dataset(images, labels, settings, reference);

  auto state = make_train_state<float>(settings.train);
  for (int e = 0; e < settings.train.epochs; ++e) {
    const double loss = train_epoch(state, dataset, settings.train);
    if (!std::isfinite(loss)) throw DivergenceError("loss became non-finite in epoch " + std::to_string(e + 1));
    if (on_epoch) on_epoch(state.epoch, loss);
  }
  return make_checkpoint(state, settings.train, settings.preprocess, reference, dims);
}

// ---------------------------------------------------------------- inference

enum class FusionMode : std::uint8_t { Single, Linear, Adaptive };

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "single") return FusionMode::Single;
  if (s == "linear") return FusionMode::Linear;
  if (s == "adaptive") return FusionMode::Adaptive;
  throw ConfigError("mode must be single, linear or adaptive, got '" + s + "'");
}

/// Per-view probability volumes with their robust weights, sorted by view
/// (stable). Single mode takes one checkpoint, the fused modes three. Each
/// checkpoint is applied along the view it was trained on; repeated views
/// are allowed.
inline std::vector<ViewPrediction> predict_views(const Volume3D& image, const std::vector<Checkpoint>& checkpoints,
                                                 FusionMode mode) {
  if (mode == FusionMode::Single && checkpoints.size() != 1) throw ConfigError("single mode takes exactly one checkpoint");
  if (mode != FusionMode::Single && checkpoints.size() != 3) throw ConfigError("fused modes take three checkpoints");
  for (const auto& c : checkpoints)
    if (c.volume_dims != image.dims())
      throw ShapeError("image dims " + to_string(image.dims()) + " differ from checkpoint dims " + to_string(c.volume_dims));

  std::vector<ViewPrediction> out;
  for (const auto& c : checkpoints) {
    ViewPrediction p;
    p.view = c.config.view;
    p.prob = predict_view(c.params, c.arch, image, c.config.view, c.preprocess, c.reference);
    p.weight = view_weight(p.prob);
    out.push_back(std::move(p));
  }
  std::stable_sort(out.begin(), out.end(), [](const ViewPrediction& a, const ViewPrediction& b) { return a.view < b.view; });
  return out;
}

inline FusionResult fuse_predictions(const std::vector<ViewPrediction>& predictions, FusionMode mode) {
  switch (mode) {
    case FusionMode::Single: {
      if (predictions.size() != 1) throw ConfigError("single mode takes exactly one prediction");
      return {predictions.front().prob, threshold(predictions.front().prob, 0.5f), false};
    }
    case FusionMode::Linear:
      return linear_fuse(predictions);
    case FusionMode::Adaptive:
      return adaptive_fuse(predictions);
  }
  throw ConfigError("unknown fusion mode");
}

// ---------------------------------------------------------------- commands

inline int cmd_phantom(int count, const std::filesystem::path& out_dir, std::uint64_t seed,
                       const std::optional<std::filesystem::path>& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (count < 1) throw ConfigError("phantom count must be >= 1");
    const PhantomParams base = config ? read_phantom_params(KeyValues::load(*config)) : PhantomParams{};
    base.validate();
    std::error_code ec;
    if (!std::filesystem::is_directory(out_dir, ec)) throw IoError("output directory " + out_dir.string() + " does not exist");

    std::vector<std::filesystem::path> written;
    try {
      for (int i = 0; i < count; ++i) {
        PhantomParams p = base;
        p.seed = phantom_seed(seed, i);
        const auto ph = generate_phantom(p);
        const auto img = out_dir / (phantom_stem(i) + "_img.cvl");
        const auto lbl = out_dir / (phantom_stem(i) + "_lbl.cvl");
        write_cvol(ph.image, img);
        written.push_back(img);
        write_cvol(ph.label, lbl);
        written.push_back(lbl);
      }
    } catch (...) {
      for (const auto& f : written) std::filesystem::remove(f, ec);
      throw;
    }
    out << "wrote " << count << " phantom pairs to " << out_dir.string() << '\n';
    return int{kExitOk};
  });
}

/// `view` and `seed`, when given, override the config file.
inline int cmd_train(std::optional<ViewAxis> view, const std::filesystem::path& data_dir,
                     const std::optional<std::filesystem::path>& config, const std::filesystem::path& out_checkpoint,
                     std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    TrainSettings settings = config ? read_train_settings(KeyValues::load(*config)) : TrainSettings{};
    if (view) settings.train.view = *view;
    if (seed) settings.train.seed = *seed;
    settings.validate();

    const auto pairs = find_data_pairs(data_dir);
    std::vector<Volume3D> images;
    std::vector<LabelVolume> labels;
    for (const auto& p : pairs) {
      images.push_back(read_intensity_cvol(p.image));
      labels.push_back(read_label_cvol(p.label));
      if (images.back().dims() != labels.back().dims())
        throw PairingError("image and label of " + p.stem + " differ in dims");
    }
    const auto ck = train_view(images, labels, settings, [&](int epoch, double loss) {
      out << "epoch=" << epoch << " loss=" << format_double(loss) << '\n' << std::flush;
    });
    save_checkpoint(ck, out_checkpoint);
    return int{kExitOk};
  });
}

inline std::filesystem::path with_suffix(const std::filesystem::path& prefix, const std::string& suffix) {
  std::filesystem::path p = prefix;
  p += suffix;
  return p;
}

/// Writes `<out>_prob.cvl` and `<out>_mask.cvl`.
inline int cmd_segment(const std::filesystem::path& image_path, const std::vector<std::filesystem::path>& checkpoint_paths,
                       const std::string& mode_name, const std::filesystem::path& out_prefix, std::ostream& out,
                       std::ostream& err) {
  return guarded(err, [&] {
    const FusionMode mode = parse_fusion_mode(mode_name);
    std::vector<Checkpoint> checkpoints;
    for (const auto& p : checkpoint_paths) checkpoints.push_back(load_checkpoint(p));
    const auto image = read_intensity_cvol(image_path);
    const auto predictions = predict_views(image, checkpoints, mode);
    if (mode != FusionMode::Single)
      for (ViewAxis v : kAllViews)
        if (std::none_of(predictions.begin(), predictions.end(), [&](const ViewPrediction& p) { return p.view == v; }))
          err << "warning: no checkpoint for view " << view_letter(v) << '\n';
    const auto fused = fuse_predictions(predictions, mode);

    const auto prob_path = with_suffix(out_prefix, "_prob.cvl");
    const auto mask_path = with_suffix(out_prefix, "_mask.cvl");
    write_cvol(fused.prob, prob_path);
    try {
      write_cvol(fused.mask, mask_path);
    } catch (...) {
      std::error_code ec;
      std::filesystem::remove(prob_path, ec);
      throw;
    }
    if (mode == FusionMode::Adaptive) {
      for (std::size_t i = 0; i < predictions.size(); ++i)
        out << (i ? " " : "") << "w_" << static_cast<char>(std::toupper(view_letter(predictions[i].view))) << '=' << format_double(predictions[i].weight);
      out << '\n';
      if (fused.fell_back_to_mean) out << "all view weights are zero; used the unweighted mean\n";
    }
    return int{kExitOk};
  });
}

/// Writes the report; exit 7 (report still written) when the surface
/// distance is undefined because a mask is empty.
inline int cmd_eval(const std::filesystem::path& pred_path, const std::filesystem::path& truth_path,
                    const std::filesystem::path& report_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto pred = read_label_cvol(pred_path);
    const auto truth = read_label_cvol(truth_path);
    if (!pred.same_geometry(truth))
      throw ShapeError("prediction " + to_string(pred.dims()) + " and truth " + to_string(truth.dims()) +
                       " differ in dims or spacing");
    const auto report = evaluate(pred, truth);
    const std::string text = serialize_report(report);
    write_file_atomic(report_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    out << "dice=" << format_double(*report.dice) << '\n';
    out << format_report_table(report);
    if (!report.s2s_mm) {
      err << "error: surface distance is undefined for an empty mask\n";
      return int{kExitEmptyMask};
    }
    return int{kExitOk};
  });
}

}  // namespace cardiacnet
