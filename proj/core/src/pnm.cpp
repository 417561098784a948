// PFM, PGM and PPM readers/writers.

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "depthref/io_formats.hpp"

namespace depthref {

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}' for reading", path.string()));
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

namespace {

// Cursor over a netpbm-style ASCII header followed by a binary payload.
class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  std::string token() {
    skip_space_and_comments();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      out.push_back(bytes_[pos_++]);
    }
    if (out.empty()) fail("unexpected end of header");
    return out;
  }

  long long integer() {
    const std::string t = token();
    try {
      std::size_t used = 0;
      const long long v = std::stoll(t, &used);
      if (used != t.size() || v <= 0) fail(fmt::format("bad dimension '{}'", t));
      return v;
    } catch (const std::logic_error&) {
      fail(fmt::format("bad number '{}'", t));
    }
  }

  double real() {
    const std::string t = token();
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) fail(fmt::format("bad scale '{}'", t));
      return v;
    } catch (const std::logic_error&) {
      fail(fmt::format("bad scale '{}'", t));
    }
  }

  /// Consumes the single whitespace byte that separates header and payload.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("missing separator before payload");
    }
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(fmt::format("{}: malformed header: {}", path_.string(), what));
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

std::uint32_t load_u32(const char* p, bool little_endian) {
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  if (little_endian) {
    return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
           (std::uint32_t{b[3]} << 24);
  }
  return std::uint32_t{b[3]} | (std::uint32_t{b[2]} << 8) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[0]} << 24);
}

void append_u32_le(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

}  // namespace

ScalarField read_pfm(const std::filesystem::path& path, FieldRole role) {
  const std::string bytes = read_file_bytes(path);
  HeaderReader header(bytes, path);
  const std::string magic = header.token();
  if (magic == "PF") {
    throw FormatError(fmt::format("{}: 3-channel PFM cannot be read as a scalar field", path.string()));
  }
  if (magic != "Pf") header.fail(fmt::format("unknown magic '{}'", magic));
  const auto width = static_cast<std::size_t>(header.integer());
  const auto height = static_cast<std::size_t>(header.integer());
  const double scale = header.real();
  if (scale == 0.0 || !std::isfinite(scale)) header.fail("scale must be nonzero and finite");
  const std::size_t offset = header.payload_offset();

  const std::size_t need = width * height * 4;
  if (bytes.size() - offset < need) {
    throw FormatError(fmt::format("{}: truncated payload ({} of {} bytes)", path.string(),
                                  bytes.size() - offset, need));
  }
  const bool little = scale < 0.0;
  ScalarField field(width, height, role);
  for (std::size_t row = 0; row < height; ++row) {
    const std::size_t y = height - 1 - row;  // bottom-to-top storage
    for (std::size_t x = 0; x < width; ++x) {
      const std::uint32_t raw = load_u32(&bytes[offset + (row * width + x) * 4], little);
      const auto v = static_cast<double>(std::bit_cast<float>(raw));
      if (std::isfinite(v)) field.set(x, y, v);
    }
  }
  return field;
}

void write_pfm(const ScalarField& field, const std::filesystem::path& path) {
  std::string out = fmt::format("Pf\n{} {}\n-1.0\n", field.width(), field.height());
  out.reserve(out.size() + field.size() * 4);
  const float invalid = std::numeric_limits<float>::quiet_NaN();
  for (std::size_t row = 0; row < field.height(); ++row) {
    const std::size_t y = field.height() - 1 - row;
    for (std::size_t x = 0; x < field.width(); ++x) {
      const float v = field.valid(x, y) ? static_cast<float>(field.value(x, y)) : invalid;
      append_u32_le(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  write_file_atomic(path, out);
}

std::uint8_t quantize_unit(double v) {
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(scaled);
}

namespace {

struct RawPnm {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::string pixels;
};

RawPnm read_raw_pnm(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  HeaderReader header(bytes, path);
  const std::string magic = header.token();
  RawPnm raw;
  if (magic == "P5") {
    raw.channels = 1;
  } else if (magic == "P6") {
    raw.channels = 3;
  } else {
    header.fail(fmt::format("unsupported magic '{}' (expected P5 or P6)", magic));
  }
  raw.width = static_cast<std::size_t>(header.integer());
  raw.height = static_cast<std::size_t>(header.integer());
  const long long maxval = header.integer();
  if (maxval != 255) {
    throw FormatError(
        fmt::format("{}: unsupported maxval {} (only 255 is supported)", path.string(), maxval));
  }
  const std::size_t offset = header.payload_offset();
  const std::size_t need = raw.width * raw.height * raw.channels;
  if (bytes.size() - offset < need) {
    throw FormatError(fmt::format("{}: truncated payload ({} of {} bytes)", path.string(),
                                  bytes.size() - offset, need));
  }
  raw.pixels = bytes.substr(offset, need);
  return raw;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  const RawPnm raw = read_raw_pnm(path);
  std::vector<double> values(raw.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<double>(static_cast<unsigned char>(raw.pixels[i])) / 255.0;
  }
  return Image(raw.width, raw.height, raw.channels, std::move(values));
}

void write_pnm(const Image& image, const std::filesystem::path& path) {
  std::string out = fmt::format("{}\n{} {}\n255\n", image.channels() == 1 ? "P5" : "P6",
                                image.width(), image.height());
  out.reserve(out.size() + image.values().size());
  for (double v : image.values()) out.push_back(static_cast<char>(quantize_unit(v)));
  write_file_atomic(path, out);
}

void write_mask_pgm(const std::vector<std::uint8_t>& mask, std::size_t width, std::size_t height,
                    const std::filesystem::path& path) {
  if (mask.size() != width * height) {
    throw std::invalid_argument("write_mask_pgm: mask size does not match dimensions");
  }
  std::string out = fmt::format("P5\n{} {}\n255\n", width, height);
  for (auto m : mask) out.push_back(static_cast<char>(m ? 255 : 0));
  write_file_atomic(path, out);
}

std::vector<std::uint8_t> read_mask_pgm(const std::filesystem::path& path, std::size_t& width,
                                        std::size_t& height) {
  const RawPnm raw = read_raw_pnm(path);
  if (raw.channels != 1) throw FormatError(fmt::format("{}: mask must be a PGM", path.string()));
  width = raw.width;
  height = raw.height;
  std::vector<std::uint8_t> mask(raw.pixels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = raw.pixels[i] != 0 ? 1 : 0;
  return mask;
}

}  // namespace depthref
