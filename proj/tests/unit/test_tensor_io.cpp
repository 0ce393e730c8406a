#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cpl/error.hpp"
#include "cpl/tensor_io.hpp"
#include "support.hpp"

namespace cpl {
namespace {

TEST(TensorIo, FramedLayout) {
  const auto bytes = encode_framed("ABCDEFGH", {{"k", 1}}, {1, 2, 3});
  const std::string header = R"({"k":1})";
  ASSERT_EQ(bytes.size(), 16 + header.size() + 3);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "ABCDEFGH");
  EXPECT_EQ(bytes[8], header.size());
  for (std::size_t i = 9; i < 16; ++i) EXPECT_EQ(bytes[i], 0);
  EXPECT_EQ(std::string(bytes.begin() + 16, bytes.begin() + 16 + header.size()), header);
  const FramedFile f = decode_framed("ABCDEFGH", bytes);
  EXPECT_EQ(f.header["k"], 1);
  EXPECT_EQ(f.blob, (std::vector<std::uint8_t>{1, 2, 3}));
}

TEST(TensorIo, FramedErrors) {
  const auto bytes = encode_framed("ABCDEFGH", {{"k", 1}}, {});
  EXPECT_THROW(decode_framed("ABCDEFGX", bytes), IoError);
  EXPECT_THROW(decode_framed("ABCDEFGH", {bytes.begin(), bytes.begin() + 18}), IoError);
  auto bad = bytes;
  bad[16] = 'x';
  EXPECT_THROW(decode_framed("ABCDEFGH", bad), IoError);
}

TEST(TensorIo, TensorRoundTripIsExact) {
  Tensor t = test::random_tensor({2, 3, 4}, 1);
  t[0] = -0.0;
  t[1] = 1e-300;
  const auto bytes = encode_tensor(t);
  EXPECT_TRUE(bitwise_equal(decode_tensor(bytes), t));
  EXPECT_EQ(encode_tensor(decode_tensor(bytes)), bytes);
  const auto dir = test::scratch_dir("tensor_io");
  save_tensor(t, dir / "t.tensor");
  EXPECT_TRUE(bitwise_equal(load_tensor(dir / "t.tensor"), t));
  EXPECT_THROW(load_tensor(dir / "missing.tensor"), IoError);
}

TEST(TensorIo, LittleEndianPayload) {
  const auto bytes = encode_tensor(Tensor::vector({1.0}));
  // IEEE-754 1.0 is 0x3FF0000000000000; little-endian puts 0xF0, 0x3F last.
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes[bytes.size() - 1], 0x3F);
  EXPECT_EQ(bytes[bytes.size() - 2], 0xF0);
  EXPECT_EQ(bytes[bytes.size() - 8], 0x00);
}

TEST(TensorIo, TensorHeaderErrors) {
  const auto bytes = encode_tensor(Tensor::vector({1.0, 2.0}));
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(decode_tensor(cut), IoError);
  FramedFile f = decode_framed("CPLTNSR1", bytes);
  f.header["dtype"] = "f32";
  EXPECT_THROW(decode_tensor(encode_framed("CPLTNSR1", f.header, f.blob)), IoError);
  f = decode_framed("CPLTNSR1", bytes);
  f.header["version"] = 2;
  EXPECT_THROW(decode_tensor(encode_framed("CPLTNSR1", f.header, f.blob)), IoError);
}

TEST(TensorIo, ReadDoublesRange) {
  std::vector<std::uint8_t> blob;
  append_doubles(blob, Tensor::vector({1.5, -2.5}));
  EXPECT_EQ(read_doubles(blob, 8, 1), std::vector<double>{-2.5});
  EXPECT_THROW(read_doubles(blob, 8, 2), IoError);
  EXPECT_THROW(read_doubles(blob, 17, 0), IoError);
}

TEST(TensorIo, PixmapEncoding) {
  Tensor gray({1, 1, 3}, std::vector<double>{-0.5, 0.5, 2.0});
  const auto p5 = encode_pixmap(gray);
  const std::string header = "P5\n3 1\n255\n";
  ASSERT_EQ(p5.size(), header.size() + 3);
  EXPECT_EQ(std::string(p5.begin(), p5.begin() + header.size()), header);
  EXPECT_EQ(p5[header.size()], 0);
  EXPECT_EQ(p5[header.size() + 1], 128);
  EXPECT_EQ(p5[header.size() + 2], 255);
  const Tensor rgb = test::random_tensor({3, 4, 5}, 2, 0, 1);
  const auto p6 = encode_pixmap(rgb);
  EXPECT_EQ(std::string(p6.begin(), p6.begin() + 2), "P6");
  const auto dir = test::scratch_dir("pixmap");
  save_pixmap(rgb, dir / "a.ppm");
  const Tensor back = load_pixmap(dir / "a.ppm");
  EXPECT_EQ(back.shape(), rgb.shape());
  EXPECT_LE(max_abs_diff(back, rgb), 0.5 / 255 + 1e-12);
  EXPECT_THROW(encode_pixmap(Tensor({2, 2, 2}, 0.0)), ConfigError);
}

TEST(TensorIo, WriteFailureIsIoError) {
  EXPECT_THROW(write_bytes("/proc/no/such/dir/file", {1}), IoError);
}

}  // namespace
}  // namespace cpl
