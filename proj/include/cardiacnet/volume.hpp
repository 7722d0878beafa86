#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cardiacnet/error.hpp"

namespace cardiacnet {

struct Dims {
  std::uint32_t nx = 0;
  std::uint32_t ny = 0;
  std::uint32_t nz = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * ny * nz;
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

// Physical voxel size in millimetres.
struct Spacing {
  float sx = 1.0f;
  float sy = 1.0f;
  float sz = 1.0f;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

/// Voxel grid stored x-fastest: index = x + nx*y + nx*ny*z.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;

  Volume(Dims dims, Spacing spacing, T fill = T{})
      : dims_(dims), spacing_(spacing), voxels_(dims.count(), fill) {
    check_geometry();
  }

  Volume(Dims dims, Spacing spacing, std::vector<T> voxels)
      : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
    check_geometry();
    if (voxels_.size() != dims_.count())
      throw ShapeError("voxel count " + std::to_string(voxels_.size()) +
                       " does not match dims " + to_string(dims_));
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return voxels_.size(); }

  std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return x + static_cast<std::size_t>(dims_.nx) * (y + static_cast<std::size_t>(dims_.ny) * z);
  }

  T& operator()(std::uint32_t x, std::uint32_t y, std::uint32_t z) { return voxels_[index(x, y, z)]; }
  const T& operator()(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return voxels_[index(x, y, z)];
  }

  T& operator[](std::size_t i) { return voxels_[i]; }
  const T& operator[](std::size_t i) const { return voxels_[i]; }

  std::span<T> data() { return voxels_; }
  std::span<const T> data() const { return voxels_; }
  const std::vector<T>& voxels() const { return voxels_; }

  bool same_geometry(const Volume& other) const {
    return dims_ == other.dims_ && spacing_ == other.spacing_;
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  void check_geometry() const {
    if (dims_.nx == 0 || dims_.ny == 0 || dims_.nz == 0)
      throw ShapeError("volume dims must be positive, got " + to_string(dims_));
    const auto positive = [](float s) { return std::isfinite(s) && s > 0.0f; };
    if (!positive(spacing_.sx) || !positive(spacing_.sy) || !positive(spacing_.sz))
      throw ValidationError("volume spacing must be finite and positive");
  }

  Dims dims_{};
  Spacing spacing_{};
  std::vector<T> voxels_;
};

using Volume3D = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

inline void validate_labels(std::span<const std::uint8_t> voxels) {
  for (std::size_t i = 0; i < voxels.size(); ++i)
    if (voxels[i] > 1)
      throw ValidationError("label voxel " + std::to_string(i) + " has value " +
                            std::to_string(voxels[i]) + ", expected 0 or 1");
}

inline bool all_finite(std::span<const float> values) {
  for (float v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

inline LabelVolume threshold(const Volume3D& prob, float level = 0.5f) {
  LabelVolume out(prob.dims(), prob.spacing());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= level ? 1 : 0;
  return out;
}

/// Row-major 2D image: index = x + width*y.
template <typename T>
struct Image2D {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<T> pixels;

  Image2D() = default;
  Image2D(std::uint32_t h, std::uint32_t w, T fill = T{}) : height(h), width(w), pixels(std::size_t{h} * w, fill) {}
  Image2D(std::uint32_t h, std::uint32_t w, std::vector<T> values)
      : height(h), width(w), pixels(std::move(values)) {
    if (pixels.size() != std::size_t{h} * w) throw ShapeError("image pixel count does not match its dims");
  }

  std::size_t size() const { return pixels.size(); }
  T& at(std::uint32_t x, std::uint32_t y) { return pixels[x + std::size_t{width} * y]; }
  const T& at(std::uint32_t x, std::uint32_t y) const { return pixels[x + std::size_t{width} * y]; }

  friend bool operator==(const Image2D&, const Image2D&) = default;
};

using Image = Image2D<float>;
using LabelImage = Image2D<std::uint8_t>;

}  // namespace cardiacnet
