#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cardiacnet/cvol.hpp"
#include "cardiacnet/error.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Rates with a zero denominator are left empty (undefined).
struct MetricsReport {
  std::optional<double> dice;
  std::optional<double> s2s_mm;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> precision;
  ConfusionCounts counts;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

namespace metrics_detail {

inline void check_pair(const LabelVolume& pred, const LabelVolume& truth) {
  if (pred.dims() != truth.dims())
    throw ShapeError("prediction dims " + to_string(pred.dims()) + " differ from truth dims " + to_string(truth.dims()));
}

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

// 1D lower envelope of parabolas (Felzenszwalb & Huttenlocher), in place on
// squared distances f sampled at unit steps scaled by `spacing`.
inline void distance_1d(std::vector<double>& f, double spacing) {
  const std::size_t n = f.size();
  const double s2 = spacing * spacing;
  std::vector<double> d(n);
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = 0;
  while (first < n && std::isinf(f[first])) ++first;
  if (first == n) return;
  v[0] = first;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  const auto intersect = [&](std::size_t q, std::size_t p) {
    const double qd = static_cast<double>(q), pd = static_cast<double>(p);
    return ((f[q] + s2 * qd * qd) - (f[p] + s2 * pd * pd)) / (2.0 * s2 * (qd - pd));
  };
  for (std::size_t q = first + 1; q < n; ++q) {
    if (std::isinf(f[q])) continue;  // never a minimizer
    double s = intersect(q, v[k]);
    while (s <= z[k]) s = intersect(q, v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = (static_cast<double>(q) - static_cast<double>(v[k])) * spacing;
    d[q] = diff * diff + f[v[k]];
  }
  f = std::move(d);
}

}  // namespace metrics_detail

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// seed voxel, separable over the three axes with anisotropic spacing.
inline std::vector<double> squared_distance_transform(const LabelVolume& seeds) {
  const Dims d = seeds.dims();
  const Spacing sp = seeds.spacing();
  std::vector<double> dist(seeds.size());
  for (std::size_t i = 0; i < dist.size(); ++i)
    dist[i] = seeds[i] ? 0.0 : std::numeric_limits<double>::infinity();

  std::vector<double> line;
  const auto sweep = [&](std::uint32_t len, double spacing, auto index_of, std::uint32_t outer_a, std::uint32_t outer_b) {
    line.resize(len);
    for (std::uint32_t a = 0; a < outer_a; ++a)
      for (std::uint32_t b = 0; b < outer_b; ++b) {
        for (std::uint32_t t = 0; t < len; ++t) line[t] = dist[index_of(t, a, b)];
        metrics_detail::distance_1d(line, spacing);
        for (std::uint32_t t = 0; t < len; ++t) dist[index_of(t, a, b)] = line[t];
      }
  };
  sweep(d.nx, sp.sx, [&](std::uint32_t t, std::uint32_t a, std::uint32_t b) { return seeds.index(t, a, b); }, d.ny, d.nz);
  sweep(d.ny, sp.sy, [&](std::uint32_t t, std::uint32_t a, std::uint32_t b) { return seeds.index(a, t, b); }, d.nx, d.nz);
  sweep(d.nz, sp.sz, [&](std::uint32_t t, std::uint32_t a, std::uint32_t b) { return seeds.index(a, b, t); }, d.nx, d.ny);
  return dist;
}

/// Foreground voxels with at least one background 6-neighbour; outside the
/// volume counts as background.
inline LabelVolume surface_voxels(const LabelVolume& mask) {
  const Dims d = mask.dims();
  LabelVolume out(d, mask.spacing());
  for (std::uint32_t z = 0; z < d.nz; ++z)
    for (std::uint32_t y = 0; y < d.ny; ++y)
      for (std::uint32_t x = 0; x < d.nx; ++x) {
        if (!mask(x, y, z)) continue;
        const bool border = x == 0 || y == 0 || z == 0 || x + 1 == d.nx || y + 1 == d.ny || z + 1 == d.nz;
        if (border || !mask(x - 1, y, z) || !mask(x + 1, y, z) || !mask(x, y - 1, z) || !mask(x, y + 1, z) ||
            !mask(x, y, z - 1) || !mask(x, y, z + 1))
          out(x, y, z) = 1;
      }
  return out;
}

/// 2|P and T| / (|P| + |T|); 1 when both masks are empty.
inline double dice(const LabelVolume& pred, const LabelVolume& truth) {
  metrics_detail::check_pair(pred, truth);
  std::uint64_t both = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p += pred[i];
    t += truth[i];
    both += pred[i] & truth[i];
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

/// Mean symmetric surface distance in mm, voxel centre to voxel centre.
inline double s2s_distance(const LabelVolume& pred, const LabelVolume& truth) {
  metrics_detail::check_pair(pred, truth);
  if (pred.spacing() != truth.spacing()) throw ShapeError("prediction and truth spacing differ");
  const auto sp = surface_voxels(pred), st = surface_voxels(truth);
  std::size_t np = 0, nt = 0;
  for (std::size_t i = 0; i < sp.size(); ++i) np += sp[i], nt += st[i];
  if (np == 0 || nt == 0) throw UndefinedMetricError("surface distance is undefined for an empty mask");

  const auto to_truth = squared_distance_transform(st);
  const auto to_pred = squared_distance_transform(sp);
  double sum = 0.0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i]) sum += std::sqrt(to_truth[i]);
    if (st[i]) sum += std::sqrt(to_pred[i]);
  }
  return sum / static_cast<double>(np + nt);
}

/// Voxel counts plus sensitivity, specificity, precision and dice. The
/// surface distance is filled in when both masks are non-empty.
inline MetricsReport confusion_rates(const LabelVolume& pred, const LabelVolume& truth) {
  metrics_detail::check_pair(pred, truth);
  MetricsReport r;
  auto& c = r.counts;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i]) {
      truth[i] ? ++c.tp : ++c.fp;
    } else {
      truth[i] ? ++c.fn : ++c.tn;
    }
  }
  r.sensitivity = metrics_detail::ratio(c.tp, c.tp + c.fn);
  r.specificity = metrics_detail::ratio(c.tn, c.tn + c.fp);
  r.precision = metrics_detail::ratio(c.tp, c.tp + c.fp);
  r.dice = 2 * c.tp + c.fp + c.fn == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return r;
}

inline MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& truth) {
  auto r = confusion_rates(pred, truth);
  try {
    r.s2s_mm = s2s_distance(pred, truth);
  } catch (const UndefinedMetricError&) {
    r.s2s_mm.reset();
  }
  return r;
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

/// One `key=value` line per metric; undefined values are written as
/// `undefined`.
inline std::string serialize_report(const MetricsReport& r) {
  std::ostringstream out;
  const auto opt = [&](const char* key, const std::optional<double>& v) {
    out << key << '=' << (v ? format_double(*v) : std::string("undefined")) << '\n';
  };
  opt("dice", r.dice);
  opt("s2s_mm", r.s2s_mm);
  opt("sensitivity", r.sensitivity);
  opt("specificity", r.specificity);
  opt("precision", r.precision);
  out << "tp=" << r.counts.tp << "\nfp=" << r.counts.fp << "\ntn=" << r.counts.tn << "\nfn=" << r.counts.fn << '\n';
  return out.str();
}

inline MetricsReport parse_report(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("report line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("report is missing ") + key);
    return it->second;
  };
  const auto opt = [&](const char* key) -> std::optional<double> {
    const auto& v = get(key);
    if (v == "undefined") return std::nullopt;
    return parse_double(v);
  };
  const auto count = [&](const char* key) {
    const auto& v = get(key);
    std::uint64_t n = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), n);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw FormatError(std::string("bad count for ") + key);
    return n;
  };
  MetricsReport r;
  r.dice = opt("dice");
  r.s2s_mm = opt("s2s_mm");
  r.sensitivity = opt("sensitivity");
  r.specificity = opt("specificity");
  r.precision = opt("precision");
  r.counts = {count("tp"), count("fp"), count("tn"), count("fn")};
  return r;
}

inline std::string format_report_table(const MetricsReport& r) {
  std::ostringstream out;
  const auto row = [&](const char* name, const std::optional<double>& v, const char* unit = "") {
    out << "  " << name;
    for (std::size_t i = std::char_traits<char>::length(name); i < 14; ++i) out << ' ';
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", *v);
      out << buf << unit << '\n';
    } else {
      out << "undefined\n";
    }
  };
  row("Dice", r.dice);
  row("S2S", r.s2s_mm, " mm");
  row("Sensitivity", r.sensitivity);
  row("Specificity", r.specificity);
  row("Precision", r.precision);
  out << "  TP/FP/TN/FN   " << r.counts.tp << '/' << r.counts.fp << '/' << r.counts.tn << '/' << r.counts.fn << '\n';
  return out.str();
}

}  // namespace cardiacnet
