#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

// A: slices along z, S: along x, C: along y.
enum class ViewAxis : std::uint8_t { A = 0, S = 1, C = 2 };

inline constexpr std::array<ViewAxis, 3> kAllViews = {ViewAxis::A, ViewAxis::S, ViewAxis::C};

inline char view_letter(ViewAxis v) {
  switch (v) {
    case ViewAxis::A: return 'a';
    case ViewAxis::S: return 's';
    case ViewAxis::C: return 'c';
  }
  return '?';
}

inline std::optional<ViewAxis> parse_view_name(std::string_view s) {
  if (s == "a" || s == "A") return ViewAxis::A;
  if (s == "s" || s == "S") return ViewAxis::S;
  if (s == "c" || s == "C") return ViewAxis::C;
  return std::nullopt;
}

template <typename T>
struct SliceStack {
  ViewAxis view = ViewAxis::A;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<Image2D<T>> slices;
  Dims source_dims{};
  Spacing source_spacing{};

  std::size_t count() const { return slices.size(); }
};

namespace views_detail {

// In-slice layout per view, (row, column) in volume axes:
//   A: slice z, row y, column x  -> h = ny, w = nx
//   S: slice x, row y, column z  -> h = ny, w = nz
//   C: slice y, row z, column x  -> h = nz, w = nx
struct SliceGeometry {
  std::uint32_t count, height, width;
};

inline SliceGeometry geometry(const Dims& d, ViewAxis v) {
  switch (v) {
    case ViewAxis::A: return {d.nz, d.ny, d.nx};
    case ViewAxis::S: return {d.nx, d.ny, d.nz};
    case ViewAxis::C: return {d.ny, d.nz, d.nx};
  }
  return {0, 0, 0};
}

// Volume linear index of pixel (col, row) in slice s.
inline std::size_t voxel_index(const Dims& d, ViewAxis v, std::uint32_t s, std::uint32_t row, std::uint32_t col) {
  std::uint32_t x = 0, y = 0, z = 0;
  switch (v) {
    case ViewAxis::A: x = col, y = row, z = s; break;
    case ViewAxis::S: x = s, y = row, z = col; break;
    case ViewAxis::C: x = col, y = s, z = row; break;
  }
  return x + static_cast<std::size_t>(d.nx) * (y + static_cast<std::size_t>(d.ny) * z);
}

}  // namespace views_detail

template <typename T>
SliceStack<T> parse_view(const Volume<T>& volume, ViewAxis view) {
  const auto g = views_detail::geometry(volume.dims(), view);
  SliceStack<T> stack;
  stack.view = view;
  stack.height = g.height;
  stack.width = g.width;
  stack.source_dims = volume.dims();
  stack.source_spacing = volume.spacing();
  stack.slices.reserve(g.count);
  for (std::uint32_t s = 0; s < g.count; ++s) {
    Image2D<T> img(g.height, g.width);
    for (std::uint32_t r = 0; r < g.height; ++r)
      for (std::uint32_t c = 0; c < g.width; ++c)
        img.at(c, r) = volume[views_detail::voxel_index(volume.dims(), view, s, r, c)];
    stack.slices.push_back(std::move(img));
  }
  return stack;
}

template <typename T>
Volume<T> restack_view(const SliceStack<T>& stack) {
  const auto g = views_detail::geometry(stack.source_dims, stack.view);
  if (stack.count() != g.count || stack.height != g.height || stack.width != g.width)
    throw ShapeError("slice stack does not match its source dims " + to_string(stack.source_dims));
  Volume<T> volume(stack.source_dims, stack.source_spacing);
  for (std::uint32_t s = 0; s < g.count; ++s) {
    const auto& img = stack.slices[s];
    if (img.height != g.height || img.width != g.width)
      throw ShapeError("slice " + std::to_string(s) + " has inconsistent dims");
    for (std::uint32_t r = 0; r < g.height; ++r)
      for (std::uint32_t c = 0; c < g.width; ++c)
        volume[views_detail::voxel_index(stack.source_dims, stack.view, s, r, c)] = img.at(c, r);
  }
  return volume;
}

}  // namespace cardiacnet
