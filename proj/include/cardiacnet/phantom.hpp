#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "cardiacnet/error.hpp"
#include "cardiacnet/rng.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

/// Synthetic atrium: an ellipsoid body with four attached tubes, each
/// reaching tube_length_mm past the body surface. Lengths are in mm.
struct PhantomParams {
  Dims dims{64, 64, 64};
  Spacing spacing{1.25f, 1.25f, 2.7f};
  double body_inplane_min_mm = 14.0, body_inplane_max_mm = 20.0;  // x and y semi-axes
  double body_axial_min_mm = 18.0, body_axial_max_mm = 30.0;      // z semi-axis
  double tube_radius_min_mm = 2.5, tube_radius_max_mm = 4.0;
  double tube_length_mm = 10.0;
  int tube_count = 4;
  double center_jitter_mm = 2.0;
  double foreground_mean = 180.0;
  double background_mean = 60.0;
  double noise_sigma = 20.0;
  std::uint64_t seed = 1;
  int margin_voxels = 2;

  void validate() const {
    if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) throw ConfigError("phantom dims must be positive");
    if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) throw ConfigError("phantom spacing must be positive");
    if (!(body_inplane_min_mm > 0 && body_inplane_min_mm <= body_inplane_max_mm)) throw ConfigError("bad in-plane semi-axis range");
    if (!(body_axial_min_mm > 0 && body_axial_min_mm <= body_axial_max_mm)) throw ConfigError("bad axial semi-axis range");
    if (!(tube_radius_min_mm > 0 && tube_radius_min_mm <= tube_radius_max_mm)) throw ConfigError("bad tube radius range");
    if (!(tube_length_mm >= 0)) throw ConfigError("tube length must be >= 0");
    if (tube_count < 0) throw ConfigError("tube count must be >= 0");
    if (!(noise_sigma >= 0)) throw ConfigError("noise sigma must be >= 0");
    if (margin_voxels < 0) throw ConfigError("margin must be >= 0");
  }
};

struct Phantom {
  Volume3D image;
  LabelVolume label;
  int attempts = 1;
};

namespace phantom_detail {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline double segment_distance_sq(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 ap{p[0] - a[0], p[1] - a[1], p[2] - a[2]};
  const double len2 = dot(ab, ab);
  const double t = len2 > 0 ? std::clamp(dot(ap, ab) / len2, 0.0, 1.0) : 0.0;
  const Vec3 q{ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]};
  return dot(q, q);
}

}  // namespace phantom_detail

/// Deterministic per seed. If the shape comes closer than margin_voxels to
/// the border, body and tubes are shrunk by 10% and re-rasterized, up to 20
/// attempts.
inline Phantom generate_phantom(const PhantomParams& params) {
  using phantom_detail::Vec3;
  params.validate();
  Rng rng(params.seed);
  const Spacing sp = params.spacing;
  const Dims d = params.dims;

  const Vec3 center{(d.nx - 1) * 0.5 * sp.sx + rng.uniform(-1, 1) * params.center_jitter_mm,
                    (d.ny - 1) * 0.5 * sp.sy + rng.uniform(-1, 1) * params.center_jitter_mm,
                    (d.nz - 1) * 0.5 * sp.sz + rng.uniform(-1, 1) * params.center_jitter_mm};
  const Vec3 axes{rng.uniform(params.body_inplane_min_mm, params.body_inplane_max_mm),
                  rng.uniform(params.body_inplane_min_mm, params.body_inplane_max_mm),
                  rng.uniform(params.body_axial_min_mm, params.body_axial_max_mm)};
  struct Tube {
    Vec3 dir;
    double radius;
  };
  std::vector<Tube> tubes;
  for (int t = 0; t < params.tube_count; ++t) {
    Vec3 dir{};
    double norm = 0.0;
    while (norm < 1e-6) {
      dir = {rng.normal(), rng.normal(), rng.normal()};
      norm = std::sqrt(phantom_detail::dot(dir, dir));
    }
    for (auto& c : dir) c /= norm;
    tubes.push_back({dir, rng.uniform(params.tube_radius_min_mm, params.tube_radius_max_mm)});
  }

  constexpr int kMaxAttempts = 20;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const double scale = std::pow(0.9, attempt);
    const Vec3 a{axes[0] * scale, axes[1] * scale, axes[2] * scale};
    std::vector<std::pair<Vec3, double>> segments;  // end point, radius
    for (const auto& t : tubes) {
      const double inv = std::sqrt(t.dir[0] * t.dir[0] / (a[0] * a[0]) + t.dir[1] * t.dir[1] / (a[1] * a[1]) +
                                   t.dir[2] * t.dir[2] / (a[2] * a[2]));
      const double reach = 1.0 / inv + params.tube_length_mm * scale;
      segments.push_back({{center[0] + t.dir[0] * reach, center[1] + t.dir[1] * reach, center[2] + t.dir[2] * reach},
                          t.radius * scale});
    }

    LabelVolume label(d, sp);
    bool touches_border = false;
    const auto m = static_cast<std::uint32_t>(params.margin_voxels);
    for (std::uint32_t z = 0; z < d.nz; ++z)
      for (std::uint32_t y = 0; y < d.ny; ++y)
        for (std::uint32_t x = 0; x < d.nx; ++x) {
          const Vec3 p{x * static_cast<double>(sp.sx), y * static_cast<double>(sp.sy), z * static_cast<double>(sp.sz)};
          const Vec3 r{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
          bool inside = (r[0] * r[0]) / (a[0] * a[0]) + (r[1] * r[1]) / (a[1] * a[1]) + (r[2] * r[2]) / (a[2] * a[2]) <= 1.0;
          for (std::size_t t = 0; !inside && t < segments.size(); ++t)
            inside = phantom_detail::segment_distance_sq(p, center, segments[t].first) <=
                     segments[t].second * segments[t].second;
          if (!inside) continue;
          label(x, y, z) = 1;
          if (x < m || y < m || z < m || x + m >= d.nx || y + m >= d.ny || z + m >= d.nz) touches_border = true;
        }
    if (touches_border) continue;

    Volume3D image(d, sp);
    for (std::size_t i = 0; i < image.size(); ++i) {
      const double mean = label[i] ? params.foreground_mean : params.background_mean;
      image[i] = static_cast<float>(mean + (params.noise_sigma > 0 ? params.noise_sigma * rng.normal() : 0.0));
    }
    return {std::move(image), std::move(label), attempt + 1};
  }
  throw ParameterError("phantom does not fit inside the volume after " + std::to_string(kMaxAttempts) + " attempts");
}

}  // namespace cardiacnet
