#include "cpl/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cpl/error.hpp"

namespace cpl {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

constexpr std::string_view kTensorMagic = "CPLTNSR1";

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_framed(std::string_view magic, const nlohmann::json& header,
                                        const std::vector<std::uint8_t>& blob) {
  if (magic.size() != 8) throw IoError("file magic must be 8 bytes");
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(magic.begin(), magic.end());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

FramedFile decode_framed(std::string_view magic, const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), magic.data(), 8) != 0) {
    throw IoError("bad magic: expected " + std::string(magic));
  }
  const std::uint64_t length = get_u64(bytes.data() + 8);
  if (length > bytes.size() - 16) throw IoError("truncated header");
  FramedFile f;
  const auto* begin = reinterpret_cast<const char*>(bytes.data() + 16);
  try {
    f.header = nlohmann::json::parse(begin, begin + length);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed header: ") + e.what());
  }
  if (!f.header.is_object()) throw IoError("malformed header: not an object");
  f.blob.assign(bytes.begin() + 16 + static_cast<std::ptrdiff_t>(length), bytes.end());
  return f;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move into place " + path.string() + ": " + ec.message());
}

void append_doubles(std::vector<std::uint8_t>& blob, const Tensor& t) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.raw());
  blob.insert(blob.end(), p, p + t.size() * sizeof(double));
}

std::vector<double> read_doubles(const std::vector<std::uint8_t>& blob, std::uint64_t offset,
                                 std::uint64_t count) {
  const std::uint64_t nbytes = count * sizeof(double);
  if (offset > blob.size() || nbytes > blob.size() - offset) throw IoError("truncated blob");
  std::vector<double> out(count);
  std::memcpy(out.data(), blob.data() + offset, nbytes);
  return out;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  const nlohmann::json header{{"version", kTensorFileVersion},
                              {"shape", t.shape()},
                              {"dtype", "f64"},
                              {"byte_order", "little"}};
  std::vector<std::uint8_t> blob;
  append_doubles(blob, t);
  return encode_framed(kTensorMagic, header, blob);
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  const FramedFile f = decode_framed(kTensorMagic, bytes);
  const auto& h = f.header;
  if (!h.contains("version") || !h["version"].is_number_integer() ||
      h["version"].get<int>() != kTensorFileVersion) {
    throw IoError("unsupported tensor file version");
  }
  if (h.value("dtype", "") != "f64" || h.value("byte_order", "") != "little") {
    throw IoError("unsupported tensor dtype or byte order");
  }
  Shape shape;
  try {
    shape = h.at("shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad tensor shape: ") + e.what());
  }
  if (shape.empty()) throw IoError("bad tensor shape: empty");
  const std::size_t n = shape_numel(shape);
  if (f.blob.size() != n * sizeof(double)) throw IoError("tensor blob size disagrees with shape");
  return Tensor(shape, read_doubles(f.blob, 0, n));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_bytes(path, encode_tensor(t));
}

Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_bytes(path)); }

std::vector<std::uint8_t> encode_pixmap(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ConfigError("pixmap needs a 1×H×W or 3×H×W tensor, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ostringstream head;
  head << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  const std::string text = head.str();
  std::vector<std::uint8_t> out(text.begin(), text.end());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image.at(ch, y, x), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

void save_pixmap(const Tensor& image, const std::filesystem::path& path) {
  write_bytes(path, encode_pixmap(image));
}

Tensor load_pixmap(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || (magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0) {
    throw IoError("unsupported pixmap " + path.string());
  }
  in.get();
  const std::size_t c = magic == "P5" ? 1 : 3;
  const auto start = static_cast<std::size_t>(in.tellg());
  if (bytes.size() < start + c * h * w) throw IoError("truncated pixmap " + path.string());
  Tensor out({c, h, w}, 0.0);
  std::size_t i = start;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out.at(ch, y, x) = bytes[i++] / 255.0;
  return out;
}

}  // namespace cpl
