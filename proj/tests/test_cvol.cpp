#include <gtest/gtest.h>

#include <cstring>

#include "cardiacnet/cvol.hpp"
#include "test_util.hpp"

using namespace cardiacnet;

namespace {

void append_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f32(std::vector<std::uint8_t>& b, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  append_u32(b, v);
}

// Assembled field by field, independent of the encoder.
std::vector<std::uint8_t> handmade(std::uint32_t nx, std::uint32_t ny, std::uint32_t nz, const std::vector<float>& voxels) {
  std::vector<std::uint8_t> b = {'C', 'V', 'L', '1'};
  append_u32(b, nx);
  append_u32(b, ny);
  append_u32(b, nz);
  append_f32(b, 1.0f);
  append_f32(b, 1.0f);
  append_f32(b, 1.0f);
  b.push_back(0);
  append_u32(b, static_cast<std::uint32_t>(voxels.size() * 4));
  for (float v : voxels) append_f32(b, v);
  return b;
}

}  // namespace

TEST(Cvol, ZeroVolumeReads) {
  testutil::TempDir dir("cvol");
  const auto path = dir / "zero.cvl";
  const auto bytes = handmade(2, 2, 2, std::vector<float>(8, 0.0f));
  write_file_atomic(path, bytes);
  const auto v = read_intensity_cvol(path);
  EXPECT_EQ(v.dims(), (Dims{2, 2, 2}));
  for (float x : v.voxels()) EXPECT_EQ(x, 0.0f);
}

TEST(Cvol, HandAssembledLayoutIsXFastest) {
  const auto any = decode_cvol(handmade(3, 1, 1, {1.0f, 2.0f, 3.0f}));
  const auto& v = std::get<Volume3D>(any);
  EXPECT_EQ(v(2, 0, 0), 3.0f);
  EXPECT_EQ(v(0, 0, 0), 1.0f);
}

TEST(Cvol, HeaderByteLayout) {
  Volume3D v(Dims{1, 1, 1}, Spacing{1.25f, 1.25f, 2.7f}, 7.5f);
  const auto bytes = encode_cvol(v);
  ASSERT_EQ(bytes.size(), 37u);
  EXPECT_EQ(std::memcmp(bytes.data(), "CVL1", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[28], 0);  // dtype f32
  EXPECT_EQ(bytes[29], 4);  // payload length
  float sz;
  std::memcpy(&sz, bytes.data() + 24, 4);
  EXPECT_EQ(sz, 2.7f);
  float payload;
  std::memcpy(&payload, bytes.data() + 33, 4);
  EXPECT_EQ(payload, 7.5f);
}

TEST(Cvol, RoundTripIntensityAndLabel) {
  testutil::TempDir dir("cvol");
  const auto v = testutil::random_volume({5, 4, 3}, 11, {0.5f, 0.7f, 2.5f});
  write_cvol(v, dir / "v.cvl");
  EXPECT_EQ(read_intensity_cvol(dir / "v.cvl"), v);

  const auto m = testutil::random_mask({6, 2, 3}, 12, 0.4);
  write_cvol(m, dir / "m.cvl");
  EXPECT_EQ(read_label_cvol(dir / "m.cvl"), m);
  EXPECT_EQ(read_file_bytes(dir / "m.cvl").size(), 33u + m.size());
}

TEST(Cvol, WritingTwiceGivesIdenticalBytes) {
  testutil::TempDir dir("cvol");
  const auto v = testutil::random_volume({4, 4, 4}, 3);
  write_cvol(v, dir / "a.cvl");
  write_cvol(v, dir / "b.cvl");
  EXPECT_EQ(read_file_bytes(dir / "a.cvl"), read_file_bytes(dir / "b.cvl"));
}

TEST(Cvol, SpecialFloatsSurviveBitExactly) {
  Volume3D v(Dims{4, 1, 1}, Spacing{});
  v[0] = -0.0f;
  v[1] = std::numeric_limits<float>::denorm_min();
  v[2] = std::numeric_limits<float>::max();
  v[3] = std::numeric_limits<float>::quiet_NaN();
  const auto back = std::get<Volume3D>(decode_cvol(encode_cvol(v)));
  EXPECT_EQ(encode_cvol(back), encode_cvol(v));
  EXPECT_TRUE(std::signbit(back[0]));
  EXPECT_TRUE(std::isnan(back[3]));
}

TEST(Cvol, BadMagicIsFormatError) {
  auto b = handmade(1, 1, 1, {1.0f});
  b[0] = 'X';
  EXPECT_THROW(decode_cvol(b), FormatError);
  EXPECT_THROW(decode_cvol(std::vector<std::uint8_t>{}), FormatError);
}

TEST(Cvol, UnknownDtypeIsFormatError) {
  auto b = handmade(1, 1, 1, {1.0f});
  b[28] = 9;
  EXPECT_THROW(decode_cvol(b), FormatError);
}

TEST(Cvol, TruncationAndTrailingBytesAreLengthErrors) {
  const auto good = handmade(2, 1, 1, {1.0f, 2.0f});
  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(decode_cvol(truncated), LengthError);
  auto header_only = std::vector<std::uint8_t>(good.begin(), good.begin() + 20);
  EXPECT_THROW(decode_cvol(header_only), LengthError);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_cvol(trailing), LengthError);
  auto wrong_len = good;
  wrong_len[29] = 4;
  EXPECT_THROW(decode_cvol(wrong_len), LengthError);
}

TEST(Cvol, LabelOutsideBinaryIsValidationError) {
  LabelVolume m(Dims{2, 1, 1}, Spacing{});
  auto bytes = encode_cvol(m);
  bytes.back() = 2;
  EXPECT_THROW(decode_cvol(bytes), ValidationError);
}

TEST(Cvol, TypedReadersRejectTheOtherType) {
  testutil::TempDir dir("cvol");
  write_cvol(LabelVolume(Dims{1, 1, 1}, Spacing{}), dir / "m.cvl");
  EXPECT_THROW(read_intensity_cvol(dir / "m.cvl"), FormatError);
  write_cvol(Volume3D(Dims{1, 1, 1}, Spacing{}), dir / "v.cvl");
  EXPECT_THROW(read_label_cvol(dir / "v.cvl"), FormatError);
}

TEST(Cvol, MissingFileIsIoError) {
  EXPECT_THROW(read_cvol("/nonexistent/dir/x.cvl"), IoError);
}

TEST(Cvol, FailedWriteLeavesNothingBehind) {
  testutil::TempDir dir("cvol");
  const auto target = dir / "missing_subdir" / "v.cvl";
  EXPECT_THROW(write_cvol(Volume3D(Dims{1, 1, 1}, Spacing{}), target), IoError);
  EXPECT_FALSE(std::filesystem::exists(target));
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(Volume, RejectsBadGeometry) {
  EXPECT_THROW(Volume3D(Dims{0, 1, 1}, Spacing{}), ShapeError);
  EXPECT_THROW(Volume3D(Dims{1, 1, 1}, Spacing{0.0f, 1.0f, 1.0f}), ValidationError);
  EXPECT_THROW(Volume3D(Dims{2, 1, 1}, Spacing{}, std::vector<float>{1.0f}), ShapeError);
}
