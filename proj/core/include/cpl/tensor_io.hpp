#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cpl/tensor.hpp"

namespace cpl {

inline constexpr int kTensorFileVersion = 1;

/// Framed binary file: 8-byte magic, little-endian u64 header length, JSON
/// header, raw blob.
struct FramedFile {
  nlohmann::json header;
  std::vector<std::uint8_t> blob;
};

std::vector<std::uint8_t> encode_framed(std::string_view magic, const nlohmann::json& header,
                                        const std::vector<std::uint8_t>& blob);
/// Throws IoError on a wrong magic, truncated frame or malformed header.
FramedFile decode_framed(std::string_view magic, const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

void append_doubles(std::vector<std::uint8_t>& blob, const Tensor& t);
/// Copies `count` doubles starting at byte `offset`; IoError if out of range.
std::vector<double> read_doubles(const std::vector<std::uint8_t>& blob, std::uint64_t offset,
                                 std::uint64_t count);

/// Raw tensor file (magic "CPLTNSR1"; header {version, shape, dtype, byte_order}).
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

/// Binary pixmap from a C×H×W tensor in [0,1] (values are clamped): C=1 → P5,
/// C=3 → P6.
std::vector<std::uint8_t> encode_pixmap(const Tensor& image);
void save_pixmap(const Tensor& image, const std::filesystem::path& path);
/// Reads P5/P6 with maxval 255 into a C×H×W tensor in [0,1].
Tensor load_pixmap(const std::filesystem::path& path);

}  // namespace cpl
