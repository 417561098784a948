#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>

#include "depthref/checkpoint.hpp"
#include "depthref/io_formats.hpp"
#include "depthref/rng.hpp"
#include "depthref/scenegen.hpp"
#include "test_support.hpp"

namespace depthref {
namespace {

std::string le_float_bytes(float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  std::string s(4, '\0');
  for (int k = 0; k < 4; ++k) s[k] = char((u >> (8 * k)) & 0xFF);
  return s;
}

std::string be_float_bytes(float v) {
  std::string s = le_float_bytes(v);
  std::swap(s[0], s[3]);
  std::swap(s[1], s[2]);
  return s;
}

ScalarField random_float_field(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  ScalarField f(w, h, FieldRole::disparity);
  for (std::size_t i = 0; i < f.size(); ++i) f.set(i, double(float(rng.uniform(-50.0, 50.0))));
  return f;
}

TEST(Pfm, RoundTripBitIdentical) {
  testing::TempDir tmp;
  ScalarField f = random_float_field(4, 3, 1);
  f.invalidate(5);
  write_pfm(f, tmp / "a.pfm");
  const ScalarField g = read_pfm(tmp / "a.pfm", FieldRole::disparity);
  ASSERT_TRUE(g.same_shape(f));
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(g.valid(i), f.valid(i));
    if (f.valid(i)) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(g[i]), std::bit_cast<std::uint64_t>(f[i]));
    }
  }
  write_pfm(g, tmp / "b.pfm");
  EXPECT_EQ(read_file_bytes(tmp / "a.pfm"), read_file_bytes(tmp / "b.pfm"));
}

TEST(Pfm, HeaderAndBottomUpRows) {
  testing::TempDir tmp;
  ScalarField f(4, 3, FieldRole::generic);
  for (std::size_t i = 0; i < 12; ++i) f.set(i, double(i));
  write_pfm(f, tmp / "a.pfm");
  const std::string bytes = read_file_bytes(tmp / "a.pfm");
  const std::string header = "Pf\n4 3\n-1.0\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  ASSERT_EQ(bytes.size(), header.size() + 4 * 4 * 3);
  // First stored row is the bottom image row (y = 2).
  EXPECT_EQ(bytes.substr(header.size(), 4), le_float_bytes(8.0f));
  EXPECT_EQ(bytes.substr(header.size() + 4 * 8, 4), le_float_bytes(0.0f));
}

TEST(Pfm, HandWrittenLittleEndian) {
  testing::TempDir tmp;
  std::string bytes = "Pf\n4 3\n-1.0\n";
  for (int y = 2; y >= 0; --y)
    for (int x = 0; x < 4; ++x) bytes += le_float_bytes(float(10 * y + x) + 0.5f);
  write_file_atomic(tmp / "h.pfm", bytes);
  const ScalarField f = read_pfm(tmp / "h.pfm");
  EXPECT_EQ(f.width(), 4u);
  EXPECT_EQ(f.height(), 3u);
  EXPECT_EQ(f.value(3, 2), 23.5);
  EXPECT_EQ(f.value(0, 0), 0.5);
}

TEST(Pfm, TruncatedPayload) {
  testing::TempDir tmp;
  std::string bytes = "Pf\n4 3\n-1.0\n" + std::string(4 * 4 * 3 - 1, '\0');
  write_file_atomic(tmp / "t.pfm", bytes);
  EXPECT_THROW(read_pfm(tmp / "t.pfm"), FormatError);
}

TEST(Pfm, MalformedHeaderAndColour) {
  testing::TempDir tmp;
  write_file_atomic(tmp / "m.pfm", "P7\n4 3\n-1.0\n");
  EXPECT_THROW(read_pfm(tmp / "m.pfm"), FormatError);
  write_file_atomic(tmp / "c.pfm", "PF\n1 1\n-1.0\n" + std::string(12, '\0'));
  EXPECT_THROW(read_pfm(tmp / "c.pfm"), FormatError);
  write_file_atomic(tmp / "s.pfm", "Pf\n1 1\n0.0\n" + std::string(4, '\0'));
  EXPECT_THROW(read_pfm(tmp / "s.pfm"), FormatError);
}

TEST(Pfm, BigEndianTwinReadsSameValues) {
  testing::TempDir tmp;
  const ScalarField f = random_float_field(5, 4, 2);
  std::string le = "Pf\n5 4\n-1.0\n", be = "Pf\n5 4\n1.0\n";
  for (int y = 3; y >= 0; --y)
    for (int x = 0; x < 5; ++x) {
      le += le_float_bytes(float(f.value(x, y)));
      be += be_float_bytes(float(f.value(x, y)));
    }
  write_file_atomic(tmp / "le.pfm", le);
  write_file_atomic(tmp / "be.pfm", be);
  const ScalarField a = read_pfm(tmp / "le.pfm");
  const ScalarField b = read_pfm(tmp / "be.pfm");
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(a[i], f[i]);
    EXPECT_EQ(b[i], f[i]);
  }
}

TEST(Pfm, NonFiniteReadsInvalid) {
  testing::TempDir tmp;
  std::string bytes = "Pf\n2 1\n-1.0\n" + le_float_bytes(NAN) + le_float_bytes(INFINITY);
  write_file_atomic(tmp / "n.pfm", bytes);
  const ScalarField f = read_pfm(tmp / "n.pfm");
  EXPECT_FALSE(f.valid(0));
  EXPECT_FALSE(f.valid(1));
}

TEST(Pnm, QuantisationRule) {
  EXPECT_EQ(quantize_unit(0.5), 128);
  EXPECT_EQ(quantize_unit(0.0), 0);
  EXPECT_EQ(quantize_unit(1.0), 255);
  EXPECT_EQ(quantize_unit(1.0 / 255.0), 1);
}

TEST(Pnm, HalfWritesByte128) {
  testing::TempDir tmp;
  write_pnm(Image(1, 1, 1, {0.5}), tmp / "h.pgm");
  const std::string bytes = read_file_bytes(tmp / "h.pgm");
  EXPECT_EQ(bytes, std::string("P5\n1 1\n255\n") + char(128));
}

TEST(Pnm, QuantisedRoundTripLossless) {
  testing::TempDir tmp;
  Rng rng(3);
  for (std::size_t ch : {1u, 3u}) {
    std::vector<double> v(7 * 5 * ch);
    for (double& x : v) x = double(rng.below(256)) / 255.0;
    const Image img(7, 5, ch, v);
    const auto path = tmp / (ch == 1 ? "a.pgm" : "a.ppm");
    write_pnm(img, path);
    EXPECT_EQ(read_pnm(path), img);
    write_pnm(read_pnm(path), tmp / "b.pnm");
    EXPECT_EQ(read_file_bytes(path), read_file_bytes(tmp / "b.pnm"));
  }
}

TEST(Pnm, RejectsOtherMaxval) {
  testing::TempDir tmp;
  write_file_atomic(tmp / "m.pgm", std::string("P5\n1 1\n65535\n") + std::string(2, '\0'));
  EXPECT_THROW(read_pnm(tmp / "m.pgm"), FormatError);
  write_file_atomic(tmp / "x.pgm", std::string("P2\n1 1\n255\n0\n"));
  EXPECT_THROW(read_pnm(tmp / "x.pgm"), FormatError);
}

TEST(Pnm, CommentsInHeader) {
  testing::TempDir tmp;
  write_file_atomic(tmp / "c.pgm", std::string("P5\n# note\n2 1\n255\n") + char(0) + char(255));
  const Image img = read_pnm(tmp / "c.pgm");
  EXPECT_EQ(img.at(1, 0), 1.0);
}

class DatasetFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    SceneSpec spec;
    spec.width = 40;
    spec.height = 20;
    spec.seed = 9;
    manifest_ = generate_dataset(spec, 2, tmp_ / "data");
  }
  testing::TempDir tmp_;
  Manifest manifest_;
};

TEST_F(DatasetFixture, ManifestRoundTrip) {
  const Manifest m = read_manifest(tmp_ / "data" / kManifestName);
  EXPECT_EQ(m.rig.baseline_m, manifest_.rig.baseline_m);
  EXPECT_EQ(m.rig.focal_x_px, manifest_.rig.focal_x_px);
  EXPECT_EQ(format_manifest(m), format_manifest(manifest_));
  EXPECT_EQ(m.entries[1].name(), "sample_0001");
}

TEST_F(DatasetFixture, IngestGroundTruth) {
  Manifest m = read_manifest(tmp_ / "data");
  ingest_external_disparity(m, 0, m.resolve(m.entries[0].d_gt));
  const Manifest back = read_manifest(tmp_ / "data");
  ASSERT_TRUE(back.entries[0].d_baseline.has_value());
  EXPECT_FALSE(back.entries[1].d_baseline.has_value());
  const LoadedSample s = load_sample(back, 0);
  ASSERT_TRUE(s.d_baseline.has_value());
  for (std::size_t i = 0; i < s.d_gt.size(); ++i)
    if (s.d_gt.valid(i)) {
      ASSERT_EQ((*s.d_baseline)[i], s.d_gt[i]);
    }
}

TEST_F(DatasetFixture, IngestWrongDimensions) {
  Manifest m = read_manifest(tmp_ / "data");
  write_pfm(ScalarField(8, 8, 1.0, FieldRole::disparity), tmp_ / "small.pfm");
  EXPECT_THROW(ingest_external_disparity(m, 0, tmp_ / "small.pfm"), FormatError);
}

TEST_F(DatasetFixture, ValidMaskInvalidatesGroundTruth) {
  const LoadedSample s = load_sample(manifest_, 0);
  for (std::size_t i = 0; i < s.valid.size(); ++i) {
    if (!s.valid[i]) {
      EXPECT_FALSE(s.z_gt.valid(i));
      EXPECT_FALSE(s.d_gt.valid(i));
    }
  }
}

TEST(Checkpoint, RoundTripByteIdentical) {
  testing::TempDir tmp;
  UNetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 5;
  RefineNetwork net = build_unet(cfg, 12);
  net.set_head(HeadMode::additive);
  save_checkpoint(net, tmp / "a.ckpt");
  const RefineNetwork back = load_checkpoint(tmp / "a.ckpt");
  EXPECT_EQ(back.params(), net.params());
  EXPECT_EQ(back.names(), net.names());
  EXPECT_EQ(back.head(), HeadMode::additive);
  EXPECT_EQ(back.config().levels, 2u);
  EXPECT_EQ(back.config().base_channels, 5u);
  save_checkpoint(back, tmp / "b.ckpt");
  EXPECT_EQ(read_file_bytes(tmp / "a.ckpt"), read_file_bytes(tmp / "b.ckpt"));
}

TEST(Checkpoint, LayoutPrefix) {
  const std::string bytes = serialize_checkpoint(build_unet(UNetConfig{}, 0));
  EXPECT_EQ(bytes.substr(0, 4), "DRCK");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, kCheckpointVersion);
}

TEST(Checkpoint, FlippedByteFailsCrc) {
  std::string bytes = serialize_checkpoint(build_unet(UNetConfig{}, 0));
  for (std::size_t pos : {std::size_t(20), bytes.size() / 2, bytes.size() - 5}) {
    std::string bad = bytes;
    bad[pos] = char(bad[pos] ^ 0x01);
    try {
      deserialize_checkpoint(bad);
      FAIL() << "corruption at " << pos << " not detected";
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos) << e.what();
    }
  }
}

// Re-encodes the CRC after patching so only the version check can fire.
std::string with_version(std::string bytes, std::uint32_t version);

TEST(Checkpoint, UnsupportedVersionNamesSupported) {
  const std::string bytes = with_version(serialize_checkpoint(build_unet(UNetConfig{}, 0)), 999);
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "version 999 accepted";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("999"), std::string::npos) << msg;
    EXPECT_NE(msg.find("supported versions: 1"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, BadMagicAndTruncation) {
  std::string bytes = serialize_checkpoint(build_unet(UNetConfig{}, 0));
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 10)), FormatError);
}

}  // namespace

namespace {
// Independent CRC32 (reflected 0xEDB88320), bitwise.
std::uint32_t crc32_bitwise(const std::string& data) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char c : data) {
    crc ^= c;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

std::string with_version(std::string bytes, std::uint32_t version) {
  std::memcpy(bytes.data() + 4, &version, 4);
  const std::uint32_t crc = crc32_bitwise(bytes.substr(4, bytes.size() - 8));
  std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
  return bytes;
}

TEST(Checkpoint, TrailingCrcMatchesIndependentCrc32) {
  const std::string bytes = serialize_checkpoint(build_unet(UNetConfig{}, 3));
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  EXPECT_EQ(stored, crc32_bitwise(bytes.substr(4, bytes.size() - 8)));
  EXPECT_EQ(crc32_bitwise("123456789"), 0xCBF43926u);
}

}  // namespace
}  // namespace depthref
