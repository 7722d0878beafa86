#pragma once

// Flat `key=value` configuration files. Blank lines and lines starting with
// '#' are ignored; whitespace around keys and values is trimmed. Keys may
// appear once. Every reader consumes the keys it understands and rejects the
// rest, so typos surface as errors instead of silently falling back to
// defaults.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "cardiacnet/error.hpp"
#include "cardiacnet/loss.hpp"
#include "cardiacnet/phantom.hpp"
#include "cardiacnet/pipeline.hpp"
#include "cardiacnet/train.hpp"

namespace cardiacnet {

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + t + "'");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
      if (!kv.values_.emplace(key, trim(t.substr(eq + 1))).second)
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> text(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  template <typename Int>
  void read_int(const std::string& key, Int& out) {
    if (auto v = text(key)) {
      Int parsed{};
      const auto res = std::from_chars(v->data(), v->data() + v->size(), parsed);
      if (res.ec != std::errc{} || res.ptr != v->data() + v->size())
        throw ConfigError(key + ": expected an integer, got '" + *v + "'");
      out = parsed;
    }
  }

  void read_double(const std::string& key, double& out) {
    if (auto v = text(key)) out = to_double(key, *v);
  }

  void read_bool(const std::string& key, bool& out) {
    if (auto v = text(key)) {
      if (*v == "1" || *v == "true")
        out = true;
      else if (*v == "0" || *v == "false")
        out = false;
      else
        throw ConfigError(key + ": expected true/false, got '" + *v + "'");
    }
  }

  /// Throws on any key that no reader has consumed.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  static double to_double(const std::string& key, const std::string& v) {
    double parsed = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), parsed);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
      throw ConfigError(key + ": expected a number, got '" + v + "'");
    return parsed;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

/// Everything cmd_train reads from its config file.
struct TrainSettings {
  TrainConfig train;
  PreprocessConfig preprocess;
  bool augment = true;        // default augmentation plan on/off
  int slice_stride = 1;       // keep every n-th slice of each volume
  bool skip_empty_slices = false;  // drop slices without foreground

  void validate() const {
    train.validate();
    preprocess.validate();
    if (slice_stride < 1) throw ConfigError("slice_stride must be >= 1");
  }
};

inline LossKind parse_loss_name(const std::string& s) {
  if (s == "zloss") return LossKind::ZLoss;
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  throw ConfigError("loss must be zloss or cross_entropy, got '" + s + "'");
}

inline TrainSettings read_train_settings(KeyValues kv) {
  TrainSettings s;
  auto& t = s.train;
  if (auto v = kv.text("view")) {
    const auto view = parse_view_name(*v);
    if (!view) throw ConfigError("view must be a, s or c, got '" + *v + "'");
    t.view = *view;
  }
  if (auto v = kv.text("loss")) t.loss = parse_loss_name(*v);
  kv.read_double("lr", t.lr);
  kv.read_double("momentum", t.momentum);
  kv.read_int("batch", t.batch);
  kv.read_int("epochs", t.epochs);
  kv.read_int("seed", t.seed);
  kv.read_int("base_filters", t.base_filters);
  kv.read_double("zloss_a", t.zloss.a);
  kv.read_double("zloss_b", t.zloss.b);
  kv.read_double("zloss_sigma_floor", t.zloss.sigma_floor);
  auto& p = s.preprocess;
  kv.read_int("diffusion_iterations", p.diffusion_iterations);
  kv.read_double("diffusion_kappa", p.diffusion_kappa);
  kv.read_double("diffusion_dt", p.diffusion_dt);
  kv.read_bool("histogram_match", p.histogram_match);
  kv.read_double("intensity_scale", p.intensity_scale);
  kv.read_bool("augment", s.augment);
  kv.read_int("slice_stride", s.slice_stride);
  kv.read_bool("skip_empty_slices", s.skip_empty_slices);
  kv.reject_unknown();
  s.validate();
  return s;
}

inline PhantomParams read_phantom_params(KeyValues kv) {
  PhantomParams p;
  if (auto v = kv.text("dims")) {
    std::istringstream in(*v);
    long x = 0, y = 0, z = 0;
    if (!(in >> x >> y >> z) || x < 1 || y < 1 || z < 1) throw ConfigError("dims: expected three positive integers");
    p.dims = {static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(z)};
  }
  if (auto v = kv.text("spacing")) {
    std::istringstream in(*v);
    float x = 0, y = 0, z = 0;
    if (!(in >> x >> y >> z)) throw ConfigError("spacing: expected three numbers");
    p.spacing = {x, y, z};
  }
  kv.read_double("body_inplane_min_mm", p.body_inplane_min_mm);
  kv.read_double("body_inplane_max_mm", p.body_inplane_max_mm);
  kv.read_double("body_axial_min_mm", p.body_axial_min_mm);
  kv.read_double("body_axial_max_mm", p.body_axial_max_mm);
  kv.read_double("tube_radius_min_mm", p.tube_radius_min_mm);
  kv.read_double("tube_radius_max_mm", p.tube_radius_max_mm);
  kv.read_double("tube_length_mm", p.tube_length_mm);
  kv.read_int("tube_count", p.tube_count);
  kv.read_double("center_jitter_mm", p.center_jitter_mm);
  kv.read_double("foreground_mean", p.foreground_mean);
  kv.read_double("background_mean", p.background_mean);
  kv.read_double("noise_sigma", p.noise_sigma);
  kv.read_int("margin_voxels", p.margin_voxels);
  kv.reject_unknown();
  p.validate();
  return p;
}

}  // namespace cardiacnet
