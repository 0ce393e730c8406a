#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "cpl/checkpoint.hpp"
#include "cpl/error.hpp"
#include "cpl/tensor_io.hpp"
#include "cpl/trainer.hpp"
#include "support.hpp"

namespace cpl {
namespace {

constexpr std::string_view kMagic = "CPLCKPT1";

TrainConfig tiny_config() {
  TrainConfig c;
  c.backbone.base_channels = 4;
  c.backbone.prompt_dim = 8;
  c.crop = 16;
  c.image_size = 16;
  c.batch_size = 2;
  c.steps = 2;
  c.seed = 5;
  return c;
}

std::unique_ptr<TrainState> trained() {
  auto s = std::make_unique<TrainState>(tiny_config());
  train_loop(*s, {});
  return s;
}

TEST(Checkpoint, RoundTripIsByteExact) {
  const auto s = trained();
  const auto bytes = serialize_checkpoint(*s);
  const auto loaded = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(*loaded), bytes);
  EXPECT_EQ(loaded->step, s->step);
  EXPECT_EQ(loaded->adam.step(), s->adam.step());
  const auto a = s->model.parameters();
  const auto b = loaded->model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_TRUE(bitwise_equal(a[i]->value, b[i]->value));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(s->adam.first_moments()[i], loaded->adam.first_moments()[i]));
    EXPECT_TRUE(bitwise_equal(s->adam.second_moments()[i], loaded->adam.second_moments()[i]));
  }
  EXPECT_EQ(loaded->rng.state(), s->rng.state());
}

TEST(Checkpoint, FileRoundTrip) {
  const auto s = trained();
  const auto dir = test::scratch_dir("ckpt_file");
  save_checkpoint(*s, dir / "a.ckpt");
  save_checkpoint(*load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Checkpoint, HeaderLayout) {
  const auto s = trained();
  const FramedFile f = decode_framed(kMagic, serialize_checkpoint(*s));
  EXPECT_EQ(f.header["format_version"], kCheckpointVersion);
  EXPECT_EQ(f.header["step"], 2);
  const auto& tensors = f.header["tensors"];
  const std::size_t n = s->model.parameters().size();
  ASSERT_EQ(tensors.size(), 3 * n);
  EXPECT_EQ(tensors[n]["name"], "adam.m/" + s->model.parameters()[0]->name);
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    EXPECT_EQ(t["offset"].get<std::uint64_t>(), offset);
    offset += t["nbytes"].get<std::uint64_t>();
  }
  EXPECT_EQ(offset, f.blob.size());
}

TEST(Checkpoint, CorruptedHeaderByteIsAStructuredError) {
  const auto bytes = serialize_checkpoint(*trained());
  // Every byte of the magic, length and the first part of the JSON header.
  for (std::size_t i = 0; i < 64; ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5a;
    // A flip inside a JSON string may still parse; anything else must be an IoError.
    try {
      deserialize_checkpoint(bad);
    } catch (const IoError&) {
    }
  }
  auto bad = bytes;
  bad[20] = '}';
  EXPECT_THROW(deserialize_checkpoint(bad), IoError);
}

TEST(Checkpoint, TruncationIsDetected) {
  const auto bytes = serialize_checkpoint(*trained());
  for (std::size_t keep : {std::size_t{0}, std::size_t{7}, std::size_t{12}, bytes.size() / 2,
                           bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(keep));
    EXPECT_THROW(deserialize_checkpoint(cut), IoError) << keep;
  }
}

TEST(Checkpoint, VersionMismatch) {
  FramedFile f = decode_framed(kMagic, serialize_checkpoint(*trained()));
  f.header["format_version"] = kCheckpointVersion + 1;
  try {
    deserialize_checkpoint(encode_framed(kMagic, f.header, f.blob));
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, ShapeDisagreement) {
  FramedFile f = decode_framed(kMagic, serialize_checkpoint(*trained()));
  f.header["tensors"][0]["shape"] = {1, 2, 3};
  EXPECT_THROW(deserialize_checkpoint(encode_framed(kMagic, f.header, f.blob)), IoError);
  FramedFile g = decode_framed(kMagic, serialize_checkpoint(*trained()));
  g.header["config"]["experts"] = 6;
  EXPECT_THROW(deserialize_checkpoint(encode_framed(kMagic, g.header, g.blob)), IoError);
}

TEST(Checkpoint, NonFiniteValuesAreRejected) {
  FramedFile f = decode_framed(kMagic, serialize_checkpoint(*trained()));
  const double nan = std::nan("");
  std::memcpy(f.blob.data(), &nan, sizeof nan);
  EXPECT_THROW(deserialize_checkpoint(encode_framed(kMagic, f.header, f.blob)), IoError);
}

}  // namespace
}  // namespace cpl
