#pragma once

// CVL1 volume files, little-endian throughout:
//
//   offset  size  field
//   0       4     magic "CVL1"
//   4       12    u32 nx, ny, nz
//   16      12    f32 sx, sy, sz (mm)
//   28      1     dtype: 0 = f32 intensity, 1 = u8 label
//   29      4     u32 payload byte length
//   33      ...   payload, x-fastest

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "cardiacnet/error.hpp"
#include "cardiacnet/volume.hpp"

namespace cardiacnet {

namespace cvol_detail {

inline constexpr char kMagic[4] = {'C', 'V', 'L', '1'};
inline constexpr std::size_t kHeaderBytes = 33;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace cvol_detail

enum class VoxelType : std::uint8_t { Intensity = 0, Label = 1 };

using AnyVolume = std::variant<Volume3D, LabelVolume>;

template <typename T>
constexpr VoxelType voxel_type_of() {
  if constexpr (std::is_same_v<T, float>)
    return VoxelType::Intensity;
  else
    return VoxelType::Label;
}

template <typename T>
std::vector<std::uint8_t> encode_cvol(const Volume<T>& volume) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, std::uint8_t>);
  using namespace cvol_detail;
  const std::size_t payload = volume.size() * sizeof(T);
  if (payload > UINT32_MAX) throw LengthError("volume too large for CVL1 (payload exceeds 4 GiB)");

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + payload);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, volume.dims().nx);
  put_u32(out, volume.dims().ny);
  put_u32(out, volume.dims().nz);
  put_f32(out, volume.spacing().sx);
  put_f32(out, volume.spacing().sy);
  put_f32(out, volume.spacing().sz);
  out.push_back(static_cast<std::uint8_t>(voxel_type_of<T>()));
  put_u32(out, static_cast<std::uint32_t>(payload));
  if constexpr (std::is_same_v<T, float>) {
    for (float v : volume.data()) put_f32(out, v);
  } else {
    out.insert(out.end(), volume.data().begin(), volume.data().end());
  }
  return out;
}

inline AnyVolume decode_cvol(std::span<const std::uint8_t> bytes) {
  using namespace cvol_detail;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a CVL1 file (bad magic)");
  if (bytes.size() < kHeaderBytes) throw LengthError("CVL1 header truncated");

  const std::uint8_t* p = bytes.data();
  const Dims dims{get_u32(p + 4), get_u32(p + 8), get_u32(p + 12)};
  const Spacing spacing{get_f32(p + 16), get_f32(p + 20), get_f32(p + 24)};
  const std::uint8_t dtype = p[28];
  const std::uint32_t payload = get_u32(p + 29);
  if (dtype > 1) throw FormatError("unknown CVL1 dtype " + std::to_string(dtype));

  const std::size_t elem = dtype == 0 ? sizeof(float) : 1;
  if (payload != dims.count() * elem)
    throw LengthError("CVL1 payload length " + std::to_string(payload) + " does not match dims " +
                      to_string(dims));
  if (bytes.size() - kHeaderBytes < payload)
    throw LengthError("CVL1 payload truncated: expected " + std::to_string(payload) + " bytes, found " +
                      std::to_string(bytes.size() - kHeaderBytes));
  if (bytes.size() - kHeaderBytes > payload) throw LengthError("CVL1 file has trailing bytes");

  const std::uint8_t* body = p + kHeaderBytes;
  if (dtype == 0) {
    std::vector<float> voxels(dims.count());
    for (std::size_t i = 0; i < voxels.size(); ++i) voxels[i] = get_f32(body + 4 * i);
    return Volume3D(dims, spacing, std::move(voxels));
  }
  std::vector<std::uint8_t> voxels(body, body + payload);
  validate_labels(voxels);
  return LabelVolume(dims, spacing, std::move(voxels));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes via a sibling temp file and rename, so a failed write never leaves a
// partial file at the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move file into place at " + path.string());
  }
}

inline AnyVolume read_cvol(const std::filesystem::path& path) { return decode_cvol(read_file_bytes(path)); }

template <typename T>
void write_cvol(const Volume<T>& volume, const std::filesystem::path& path) {
  const auto bytes = encode_cvol(volume);
  write_file_atomic(path, bytes);
}

inline Volume3D read_intensity_cvol(const std::filesystem::path& path) {
  auto any = read_cvol(path);
  if (auto* v = std::get_if<Volume3D>(&any)) return std::move(*v);
  throw FormatError(path.string() + " holds a label volume, expected intensities");
}

inline LabelVolume read_label_cvol(const std::filesystem::path& path) {
  auto any = read_cvol(path);
  if (auto* v = std::get_if<LabelVolume>(&any)) return std::move(*v);
  throw FormatError(path.string() + " holds an intensity volume, expected labels");
}

}  // namespace cardiacnet
