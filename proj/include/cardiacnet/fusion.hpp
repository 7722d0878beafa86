#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/views.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

enum class Connectivity : std::uint8_t { Six = 6, TwentySix = 26 };

/// Foreground partition. Ids run 1..n in order of decreasing size (ties:
/// smaller first linear voxel index first); 0 is background.
struct ComponentSet {
  Volume<std::uint32_t> labels;
  std::vector<std::size_t> sizes;  // sizes[k] belongs to id k+1

  std::size_t count() const { return sizes.size(); }
  std::size_t foreground() const { return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}); }
};

namespace fusion_detail {

struct DisjointSets {
  std::vector<std::uint32_t> parent;

  std::uint32_t make() {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    return parent.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a), b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Neighbours already visited in a forward raster scan (z, then y, then x).
inline std::vector<std::array<int, 3>> backward_offsets(Connectivity c) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (c == Connectivity::Six && manhattan != 1) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

}  // namespace fusion_detail

/// Two-pass union-find labeling.
inline ComponentSet connected_components(const LabelVolume& mask, Connectivity connectivity = Connectivity::TwentySix) {
  const Dims d = mask.dims();
  const auto offsets = fusion_detail::backward_offsets(connectivity);
  fusion_detail::DisjointSets sets;
  std::vector<std::uint32_t> provisional(mask.size(), UINT32_MAX);

  for (std::uint32_t z = 0; z < d.nz; ++z)
    for (std::uint32_t y = 0; y < d.ny; ++y)
      for (std::uint32_t x = 0; x < d.nx; ++x) {
        const std::size_t i = mask.index(x, y, z);
        if (!mask[i]) continue;
        std::uint32_t label = UINT32_MAX;
        for (const auto& o : offsets) {
          const long nx = static_cast<long>(x) + o[0], ny = static_cast<long>(y) + o[1], nz = static_cast<long>(z) + o[2];
          if (nx < 0 || ny < 0 || nz < 0 || nx >= d.nx || ny >= d.ny) continue;
          const std::uint32_t n = provisional[mask.index(static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny),
                                                          static_cast<std::uint32_t>(nz))];
          if (n == UINT32_MAX) continue;
          if (label == UINT32_MAX)
            label = n;
          else
            sets.unite(label, n);
        }
        provisional[i] = label == UINT32_MAX ? sets.make() : label;
      }

  // Resolve roots; record size and first voxel per root.
  std::vector<std::size_t> root_size(sets.parent.size(), 0), root_first(sets.parent.size(), SIZE_MAX);
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    if (provisional[i] == UINT32_MAX) continue;
    const auto r = sets.find(provisional[i]);
    provisional[i] = r;
    ++root_size[r];
    root_first[r] = std::min(root_first[r], i);
  }
  std::vector<std::uint32_t> roots;
  for (std::uint32_t r = 0; r < root_size.size(); ++r)
    if (root_size[r] > 0) roots.push_back(r);
  std::sort(roots.begin(), roots.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (root_size[a] != root_size[b]) return root_size[a] > root_size[b];
    return root_first[a] < root_first[b];
  });
  std::vector<std::uint32_t> id_of(sets.parent.size(), 0);
  ComponentSet out{Volume<std::uint32_t>(d, mask.spacing()), {}};
  for (std::size_t k = 0; k < roots.size(); ++k) {
    id_of[roots[k]] = static_cast<std::uint32_t>(k + 1);
    out.sizes.push_back(root_size[roots[k]]);
  }
  for (std::size_t i = 0; i < provisional.size(); ++i)
    if (provisional[i] != UINT32_MAX) out.labels[i] = id_of[provisional[i]];
  return out;
}

/// Share of the foreground held by the largest component; 0 for an empty mask.
inline double robust_weight(const ComponentSet& components) {
  if (components.sizes.empty()) return 0.0;
  return static_cast<double>(components.sizes.front()) / static_cast<double>(components.foreground());
}

struct ViewPrediction {
  ViewAxis view = ViewAxis::A;
  Volume3D prob;  // foreground probability per voxel
  double weight = 1.0;
};

/// Weight of a probability volume: robust_weight of its 0.5-binarized mask.
inline double view_weight(const Volume3D& prob, Connectivity c = Connectivity::TwentySix) {
  return robust_weight(connected_components(threshold(prob, 0.5f), c));
}

struct FusionResult {
  Volume3D prob;
  LabelVolume mask;
  bool fell_back_to_mean = false;  // all weights were zero
};

/// fused = sum_v w_v p_v / sum_v w_v, mask = fused >= 0.5. When every weight
/// is zero the unweighted mean is used and the result is flagged.
inline FusionResult adaptive_fuse(const std::vector<ViewPrediction>& predictions) {
  if (predictions.empty()) throw ShapeError("fusion needs at least one prediction");
  const auto& ref = predictions.front().prob;
  for (const auto& p : predictions) {
    if (!p.prob.same_geometry(ref)) throw ShapeError("fusion inputs differ in dims or spacing");
    if (!(p.weight >= 0.0 && p.weight <= 1.0)) throw ValidationError("view weight must lie in [0, 1]");
  }
  std::vector<double> w;
  for (const auto& p : predictions) w.push_back(p.weight);
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  FusionResult r{Volume3D(ref.dims(), ref.spacing()), LabelVolume(ref.dims(), ref.spacing()), false};
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0);
    total = static_cast<double>(w.size());
    r.fell_back_to_mean = true;
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double acc = 0.0;
    for (std::size_t v = 0; v < predictions.size(); ++v) acc += w[v] * predictions[v].prob[i];
    const double f = acc / total;
    r.prob[i] = static_cast<float>(f);
    r.mask[i] = f >= 0.5 ? 1 : 0;
  }
  return r;
}

/// Equal weights of 1/3.
inline FusionResult linear_fuse(std::vector<ViewPrediction> predictions) {
  for (auto& p : predictions) p.weight = 1.0 / 3.0;
  return adaptive_fuse(predictions);
}

}  // namespace cardiacnet
