#include <gtest/gtest.h>

#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "depthref/io_formats.hpp"
#include "test_support.hpp"

namespace depthref {
namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "depthref");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, GenWritesSamplesAndManifest) {
  testing::TempDir tmp;
  const auto r = run_cli({"gen", "--out", (tmp / "d").string(), "--count", "3", "--width", "40",
                          "--height", "20", "--baseline-m", "0.5", "--focal-px", "200", "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Manifest m = read_manifest(tmp / "d");
  EXPECT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.rig.baseline_m, 0.5);
  EXPECT_EQ(m.rig.focal_x_px, 200.0);
  EXPECT_NE(r.out.find("count = 3"), std::string::npos) << r.out;
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
}

TEST(Cli, MissingSubcommandAndUnknownFlag) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"gen", "--out", "x", "--bogus", "1"}).code, 2);
  EXPECT_EQ(run_cli({"train", "--data", "x", "--head", "sideways"}).code, 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run_cli({"--help"}).code, 0); }

TEST(Cli, RuntimeErrorExitsOne) {
  testing::TempDir tmp;
  const auto r = run_cli({"eval", "--data", (tmp / "missing").string(), "--report-dir", (tmp / "rep").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, GenCountZeroRejected) {
  testing::TempDir tmp;
  EXPECT_EQ(run_cli({"gen", "--out", (tmp / "d").string(), "--count", "0"}).code, 2);
}

TEST(Cli, BaselineDoesNotTouchImages) {
  testing::TempDir tmp;
  ASSERT_EQ(run_cli({"gen", "--out", (tmp / "d").string(), "--count", "1", "--width", "40", "--height", "20"}).code, 0);
  const std::string left = read_file_bytes(tmp / "d" / "sample_0000" / "left.ppm");
  const std::string dgt = read_file_bytes(tmp / "d" / "sample_0000" / "d_gt.pfm");
  const auto r = run_cli({"baseline", "--data", (tmp / "d").string(), "--dmax", "64"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file_bytes(tmp / "d" / "sample_0000" / "left.ppm"), left);
  EXPECT_EQ(read_file_bytes(tmp / "d" / "sample_0000" / "d_gt.pfm"), dgt);
  const Manifest m = read_manifest(tmp / "d");
  EXPECT_EQ(m.d_max, 64);
  EXPECT_TRUE(m.entries[0].d_baseline.has_value());
}

}  // namespace
}  // namespace depthref
