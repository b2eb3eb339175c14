#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "mcaol/core_types.hpp"
#include "test_support.hpp"

using namespace mcaol;

TEST(ImageRaw, ZeroBufferGivesZeroImage) {
  std::vector<std::uint8_t> bytes(32, 0);
  RawHeader h;
  h.width = h.height = 2;
  h.pixel_size = 0.5;
  const Image img = image_from_raw(bytes, h);
  EXPECT_EQ(img.width(), 2u);
  for (double v : img.values()) EXPECT_EQ(v, 0.0);
}

TEST(ImageRaw, ZerosEncodeTo32ZeroBytes) {
  const auto [bytes, h] = image_to_raw(Image::zeros(2, 1.0));
  ASSERT_EQ(bytes.size(), 32u);
  for (auto b : bytes) EXPECT_EQ(b, 0);
  EXPECT_EQ(h.width, 2u);
  EXPECT_EQ(h.height, 2u);
}

TEST(ImageRaw, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  auto v = testing_support::normal_vector(rng, 64);
  v[5] = std::numeric_limits<double>::denorm_min();
  v[6] = -0.0;
  const Image img(8, 0.1 + 1e-17, v);
  const auto [bytes, h] = image_to_raw(img, "60keV");
  const Image back = image_from_raw(bytes, h);
  EXPECT_EQ(back, img);
  EXPECT_EQ(std::memcmp(back.values().data(), img.values().data(), 64 * sizeof(double)), 0);
  EXPECT_EQ(h.pixel_size, img.pixel_size());
  EXPECT_EQ(h.energy, "60keV");
}

TEST(ImageRaw, LengthMismatchThrows) {
  std::vector<std::uint8_t> bytes(24, 0);
  RawHeader h;
  h.width = h.height = 2;
  EXPECT_THROW(image_from_raw(bytes, h), Error);
}

TEST(ImageRaw, NonFiniteRejected) {
  std::vector<double> v{0.0, std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0};
  RawHeader h;
  h.width = h.height = 2;
  EXPECT_THROW(image_from_raw(encode_f64le(v), h), Error);
}

TEST(ImageRaw, LittleEndianLayout) {
  const std::vector<double> one{1.0};
  const auto b = encode_f64le(one);
  // 1.0 = 0x3FF0000000000000
  EXPECT_EQ(b[7], 0x3F);
  EXPECT_EQ(b[6], 0xF0);
  EXPECT_EQ(b[0], 0x00);
}

TEST(Image, RejectsNonSquareAndBadPixelSize) {
  EXPECT_THROW(Image(Array2D(2, 3), 1.0), Error);
  EXPECT_THROW(Image(Array2D(2, 2), 0.0), Error);
  EXPECT_THROW(Image(Array2D(2, 2), -1.0), Error);
}

TEST(Image, ValueSemantics) {
  const Image a(2, 1.0, {1, 2, 3, 4});
  const Image b(2, 1.0, {1, 2, 3, 4});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a(1, 0), 3.0);
  EXPECT_TRUE(a.nonnegative());
  EXPECT_FALSE(Image(2, 1.0, {1, -2, 3, 4}).nonnegative());
}

TEST(FilterBank, ShapeChecks) {
  EXPECT_THROW(FilterBank(2, 4, std::vector<double>(16)), Error);
  EXPECT_THROW(FilterBank(3, 9, std::vector<double>(80)), Error);
  const FilterBank b(3, 9, std::vector<double>(81, 0.0));
  EXPECT_EQ(b.filter_size(), 9u);
  EXPECT_EQ(b.filter(2).size(), 9u);
}

TEST(FilterBank, IdentityScaledIsTightFrame) {
  // M = I / sqrt(P): M M^T = I / P.
  std::vector<double> c(9 * 9, 0.0);
  for (int k = 0; k < 9; ++k) c[k * 9 + k] = 1.0 / 3.0;
  const FilterBank b(3, 9, c);
  EXPECT_LE(b.tight_frame_residual(), 1e-15);
  c[0] = 1.0;
  EXPECT_GT(FilterBank(3, 9, c).tight_frame_residual(), 0.1);
}

TEST(Sinogram, CountsMustBeNonnegativeIntegers) {
  EXPECT_NO_THROW(Sinogram(2, {0.0, 1.0}, {0, 1, 2, 3}, SinogramKind::Counts));
  EXPECT_THROW(Sinogram(2, {0.0, 1.0}, {0, 1.5, 2, 3}, SinogramKind::Counts), Error);
  EXPECT_THROW(Sinogram(2, {0.0, 1.0}, {0, -1, 2, 3}, SinogramKind::Counts), Error);
  EXPECT_NO_THROW(Sinogram(2, {0.0, 1.0}, {0, 1.5, 2, 3}, SinogramKind::MeanCounts));
  EXPECT_THROW(Sinogram(2, {0.0, 1.0}, {0, 1, 2}, SinogramKind::Counts), Error);
}

TEST(Sinogram, DetectorMajorIndexing) {
  const Sinogram s(2, {0.0, 1.0, 2.0}, {0, 1, 2, 10, 11, 12}, SinogramKind::LineIntegrals);
  EXPECT_EQ(s(1, 2), 12.0);
  EXPECT_EQ(s(0, 1), 1.0);
}

TEST(Helpers, Nrmse) {
  const std::vector<double> ref{3.0, 4.0}, x{3.0, 4.5};
  EXPECT_DOUBLE_EQ(nrmse(x, ref), 0.1);
  EXPECT_EQ(nrmse(ref, ref), 0.0);
}
