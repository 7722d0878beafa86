#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

inline constexpr int kMaxTranslation = 20;

enum class ShiftAxis : std::uint8_t { X, Y };

struct AugmentOp {
  enum class Kind : std::uint8_t { TranslateX, TranslateY, Rotate };
  Kind kind = Kind::TranslateX;
  int amount = 0;  // pixels for translations, k (k*45 degrees) for rotations

  static AugmentOp translate_x(int t) { return {Kind::TranslateX, t}; }
  static AugmentOp translate_y(int t) { return {Kind::TranslateY, t}; }
  static AugmentOp rotate(int k) { return {Kind::Rotate, k}; }

  friend bool operator==(const AugmentOp&, const AugmentOp&) = default;
};

struct AugmentPlan {
  std::vector<AugmentOp> ops;
  bool include_original = true;
};

// t in {-20,-10,10,20} along each axis plus k in {-2,-1,1,2}: 12 ops.
inline AugmentPlan default_augment_plan() {
  AugmentPlan plan;
  for (int t : {-20, -10, 10, 20}) plan.ops.push_back(AugmentOp::translate_x(t));
  for (int t : {-20, -10, 10, 20}) plan.ops.push_back(AugmentOp::translate_y(t));
  for (int k : {-2, -1, 1, 2}) plan.ops.push_back(AugmentOp::rotate(k));
  return plan;
}

inline void validate_op(const AugmentOp& op) {
  if (op.kind == AugmentOp::Kind::Rotate) {
    if (op.amount != -2 && op.amount != -1 && op.amount != 1 && op.amount != 2)
      throw ParameterError("rotation step must be one of -2, -1, 1, 2; got " + std::to_string(op.amount));
  } else if (op.amount < -kMaxTranslation || op.amount > kMaxTranslation) {
    throw ParameterError("translation must lie in [-20, 20]; got " + std::to_string(op.amount));
  }
}

/// Content moves by t pixels; vacated pixels become 0.
template <typename T>
Image2D<T> translate_slice(const Image2D<T>& image, int t, ShiftAxis axis) {
  validate_op(axis == ShiftAxis::X ? AugmentOp::translate_x(t) : AugmentOp::translate_y(t));
  Image2D<T> out(image.height, image.width, T{});
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sx = axis == ShiftAxis::X ? x - t : x;
      const int sy = axis == ShiftAxis::Y ? y - t : y;
      if (sx >= 0 && sx < w && sy >= 0 && sy < h)
        out.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)) =
            image.at(static_cast<std::uint32_t>(sx), static_cast<std::uint32_t>(sy));
    }
  }
  return out;
}

namespace augment_detail {

// cos/sin of k*45 degrees, exact for multiples of 90.
inline std::pair<double, double> rotation(int k) {
  constexpr double r = 0.70710678118654752440;
  switch (k) {
    case -2: return {0.0, -1.0};
    case -1: return {r, -r};
    case 1: return {r, r};
    case 2: return {0.0, 1.0};
  }
  throw ParameterError("rotation step must be one of -2, -1, 1, 2");
}

}  // namespace augment_detail

/// Rotation by k*45 degrees about the image centre. Intensities are sampled
/// bilinearly, integral (label) images by nearest neighbour; samples falling
/// outside the frame read as 0.
template <typename T>
Image2D<T> rotate_slice(const Image2D<T>& image, int k) {
  validate_op(AugmentOp::rotate(k));
  const auto [c, s] = augment_detail::rotation(k);
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  const auto sample = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return static_cast<double>(image.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)));
  };

  Image2D<T> out(image.height, image.width, T{});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map: output pixel reads the source at R(-angle) * offset.
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + c * dx + s * dy;
      const double sy = cy - s * dx + c * dy;
      T value{};
      if constexpr (std::is_integral_v<T>) {
        value = static_cast<T>(sample(static_cast<int>(std::lround(sx)), static_cast<int>(std::lround(sy))));
      } else {
        const double fx = std::floor(sx), fy = std::floor(sy);
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const double ax = sx - fx, ay = sy - fy;
        double v = (1 - ax) * (1 - ay) * sample(x0, y0);
        if (ax != 0.0) v += ax * (1 - ay) * sample(x0 + 1, y0);
        if (ay != 0.0) v += (1 - ax) * ay * sample(x0, y0 + 1);
        if (ax != 0.0 && ay != 0.0) v += ax * ay * sample(x0 + 1, y0 + 1);
        value = static_cast<T>(v);
      }
      out.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)) = value;
    }
  }
  return out;
}

template <typename T>
Image2D<T> apply_op(const Image2D<T>& image, const AugmentOp& op) {
  switch (op.kind) {
    case AugmentOp::Kind::TranslateX: return translate_slice(image, op.amount, ShiftAxis::X);
    case AugmentOp::Kind::TranslateY: return translate_slice(image, op.amount, ShiftAxis::Y);
    case AugmentOp::Kind::Rotate: return rotate_slice(image, op.amount);
  }
  return image;
}

struct TrainingPair {
  Image image;
  LabelImage label;
};

/// Originals first (when requested), then one block per op in plan order,
/// each block following the input order.
inline std::vector<TrainingPair> expand_dataset(const std::vector<TrainingPair>& pairs, const AugmentPlan& plan) {
  for (const auto& op : plan.ops) validate_op(op);
  std::vector<TrainingPair> out;
  out.reserve(pairs.size() * (plan.ops.size() + (plan.include_original ? 1 : 0)));
  if (plan.include_original) out.insert(out.end(), pairs.begin(), pairs.end());
  for (const auto& op : plan.ops)
    for (const auto& p : pairs) out.push_back({apply_op(p.image, op), apply_op(p.label, op)});
  return out;
}

}  // namespace cardiacnet
