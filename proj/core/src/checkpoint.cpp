#include "depthref/checkpoint.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <map>

namespace depthref {

namespace {

constexpr char kMagic[4] = {'D', 'R', 'C', 'K'};
constexpr const char* kConfigName = "unet.config";
constexpr const char* kHeadName = "refine.head";

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

std::uint32_t crc32_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    }
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f = 0.0f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw FormatError("checkpoint: truncated payload");
  }

  const std::string& bytes_;
  std::size_t pos_;
  std::size_t end_;
};

}  // namespace

std::string serialize_checkpoint(const RefineNetwork& net) {
  const UNetConfig& cfg = net.config();
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(net.params().size() + 2));

  const auto put_tensor = [&](const std::string& name, const std::vector<std::size_t>& shape,
                              std::span<const double> values) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : values) put_f32(out, v);
  };
  const std::vector<double> config{static_cast<double>(cfg.levels),
                                   static_cast<double>(cfg.base_channels),
                                   static_cast<double>(cfg.in_channels), cfg.leaky_slope};
  put_tensor(kConfigName, {config.size()}, config);
  const std::vector<double> head{net.head() == HeadMode::additive ? 1.0 : 0.0};
  put_tensor(kHeadName, {1}, head);
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    put_tensor(net.names()[k], net.params()[k].shape(), net.params()[k].data());
  }
  put_u32(out, crc32_of(out.data() + 4, out.size() - 4));
  return out;
}

RefineNetwork deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (expected DRCK)");
  }
  if (bytes.size() < 16) throw FormatError("checkpoint: truncated payload");
  const std::size_t crc_pos = bytes.size() - 4;
  Reader trailer(bytes, crc_pos, bytes.size());
  const std::uint32_t stored = trailer.u32();
  const std::uint32_t actual = crc32_of(bytes.data() + 4, crc_pos - 4);
  if (stored != actual) {
    throw FormatError(fmt::format("checkpoint: CRC mismatch (stored {:08x}, computed {:08x})",
                                  stored, actual));
  }

  Reader r(bytes, 4, crc_pos);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("checkpoint: unsupported version {} (supported versions: {})",
                                  version, kCheckpointVersion));
  }
  const std::uint32_t count = r.u32();
  std::map<std::string, ad::Tensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 4) throw FormatError(fmt::format("checkpoint: {} has rank {}", name, rank));
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      n *= d;
    }
    std::vector<double> values(n);
    for (auto& v : values) {
      v = r.f32();
      if (!std::isfinite(v)) throw FormatError(fmt::format("checkpoint: {} holds a non-finite value", name));
    }
    if (!tensors.emplace(name, ad::Tensor(std::move(shape), std::move(values))).second) {
      throw FormatError(fmt::format("checkpoint: duplicate tensor '{}'", name));
    }
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after the last tensor");

  const auto cfg_it = tensors.find(kConfigName);
  if (cfg_it == tensors.end() || cfg_it->second.numel() != 4) {
    throw FormatError("checkpoint: missing tensor 'unet.config'");
  }
  const ad::Tensor& c = cfg_it->second;
  UNetConfig cfg;
  cfg.levels = static_cast<std::size_t>(c[0]);
  cfg.base_channels = static_cast<std::size_t>(c[1]);
  cfg.in_channels = static_cast<std::size_t>(c[2]);
  cfg.leaky_slope = c[3];

  const auto head_it = tensors.find(kHeadName);
  if (head_it == tensors.end() || head_it->second.numel() != 1 ||
      (head_it->second[0] != 0.0 && head_it->second[0] != 1.0)) {
    throw FormatError("checkpoint: missing tensor 'refine.head'");
  }
  const HeadMode head = head_it->second[0] == 1.0 ? HeadMode::additive : HeadMode::multiplicative;

  std::vector<ad::Tensor> params;
  for (const auto& [name, shape] : RefineNetwork::layout(cfg)) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(fmt::format("checkpoint: missing tensor '{}'", name));
    if (it->second.shape() != shape) {
      throw FormatError(fmt::format("checkpoint: tensor '{}' has shape {}, expected {}", name,
                                    ad::shape_string(it->second.shape()), ad::shape_string(shape)));
    }
    params.push_back(std::move(it->second));
    tensors.erase(it);
  }
  if (tensors.size() != 2) {
    throw FormatError(fmt::format("checkpoint: {} unexpected tensors", tensors.size() - 2));
  }
  RefineNetwork net(cfg, std::move(params));
  net.set_head(head);
  return net;
}

void save_checkpoint(const RefineNetwork& net, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(net));
}

RefineNetwork load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace depthref
