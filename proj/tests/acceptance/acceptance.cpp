// Acceptance suite: one PASS/FAIL line per criterion (plus the trainer loss
// trend property, run with criterion 4); exit status 0 only if all pass.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "depthref/checkpoint.hpp"
#include "depthref/evaluator.hpp"
#include "depthref/geometry.hpp"
#include "depthref/io_formats.hpp"
#include "depthref/parallel.hpp"
#include "depthref/refine.hpp"
#include "depthref/rng.hpp"
#include "depthref/trainer.hpp"
#include "random_graph.hpp"

namespace fs = std::filesystem;
using namespace depthref;

namespace {

// Pinned tolerances and protocol constants.
constexpr double kFormulaRelTol = 1e-12;
constexpr int kGeometryDraws = 1000;
constexpr double kGeometrySeconds = 5.0;

constexpr int kGradGraphs = 128;
constexpr double kGradCheckStep = 1e-3;
constexpr double kGradCheckTol = 1e-4;
constexpr double kLinearMapTol = 1e-10;
constexpr double kAutodiffSeconds = 60.0;

constexpr double kIdentitySeconds = 10.0;

constexpr std::size_t kTrainSamples = 200;
constexpr std::size_t kTestSamples = 50;
constexpr std::uint64_t kTrainDataSeed = 0;
constexpr std::uint64_t kTestDataSeed = 10000;
constexpr std::size_t kEpochs = 30;
constexpr int kSeededRuns = 5;
constexpr double kDepthErrorRatio = 0.90;
constexpr double kTrainingMinutes = 30.0;
constexpr double kEpeRatio = 1.05;
constexpr std::size_t kLossWindow = 5;
constexpr int kQuadMitigationMin = 4;
constexpr int kMulBeatsAddMin = 3;

constexpr double kOracleDepthTol = 1e-6;
constexpr double kOracleEpeTol = 1e-6;
constexpr double kShiftedEpeTol = 1e-9;

constexpr double kFormatSeconds = 5.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs the command line front end in-process; throws on a nonzero exit.
void cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "depthref");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) {
    throw std::runtime_error(fmt::format("'{}' exited with {}: {}", args[1], code, err.str()));
  }
}

void generate_with_baseline(const fs::path& dir, std::size_t count, std::uint64_t seed) {
  fs::remove_all(dir);
  cli_run({"gen", "--out", dir.string(), "--count", std::to_string(count), "--seed", std::to_string(seed)});
  cli_run({"baseline", "--data", dir.string()});
}

// ---------------------------------------------------------------------------

Outcome formula_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  int failures = 0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };

  const CameraRig rig{0.5, 200.0};
  ScalarField d(2, 1, FieldRole::disparity);
  d.set(0, 100.0);
  d.set(1, 50.0);
  const ScalarField z = disparity_to_depth(d, rig);
  failures += rel(z[0], 1.0) > kFormulaRelTol;
  failures += rel(z[1], 2.0) > kFormulaRelTol;
  failures += rel(depth_to_disparity(z, rig)[0], 100.0) > kFormulaRelTol;
  const CameraRig unit{1.0, 100.0};
  failures += rel(predicted_depth_error(10.0, 0.1, unit), 0.1) > kFormulaRelTol;
  failures += rel(exact_depth_error(10.0, 0.1, unit), 100.0 / 10.0 - 100.0 / 10.1) > kFormulaRelTol;

  Rng rng(2024);
  int violations = 0;
  double worst = 0.0;
  for (int k = 0; k < kGeometryDraws; ++k) {
    const CameraRig r{rng.uniform(0.05, 1.5), rng.uniform(50.0, 2000.0)};
    const double eps = rng.uniform(0.01, 2.0);
    const double d_gt = rng.uniform(10.0 * eps, 200.0 * eps);
    const double p = predicted_depth_error(d_gt, eps, r);
    const double e = exact_depth_error(d_gt, eps, r);
    const double gap = std::abs(p - e) / e;
    worst = std::max(worst, gap / (eps / d_gt));
    violations += gap > eps / d_gt * (1.0 + 1e-12);
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && violations == 0 && secs < kGeometrySeconds,
          fmt::format("{} substitution failures, {}/{} bound violations, max gap/bound {:.6f}, {:.3f} s",
                      failures, violations, kGeometryDraws, worst, secs)};
}

Outcome autodiff_correctness() {
  using namespace depthref::testing;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int with_upsample = 0;
  for (int seed = 0; seed < kGradGraphs; ++seed) {
    auto [graph, params] = make_random_graph(static_cast<std::uint64_t>(seed));
    with_upsample += graph.stride == 2;
    const ad::GraphFn fn = [&graph = graph](Tape& tape, std::span<const Var> p) { return graph.build(tape, p); };
    worst = std::max(worst, ad::grad_check(fn, params, kGradCheckStep).max_rel_error);
  }
  Rng rng(5);
  const Tensor w = random_tensor({3, 4}, rng, 0.5, 2.0);
  const Tensor x = random_tensor({3, 4}, rng, 0.5, 2.0);
  const ad::GraphFn linear = [&x](Tape& tape, std::span<const Var> p) {
    return tape.mean_abs(tape.mul(p[0], tape.constant(x)), all_true(12));
  };
  const double linear_err = ad::grad_check(linear, {w}, kGradCheckStep).max_rel_error;
  const double secs = seconds_since(t0);
  return {worst < kGradCheckTol && linear_err < kLinearMapTol && with_upsample > 0 &&
              with_upsample < kGradGraphs && secs < kAutodiffSeconds,
          fmt::format("{} graphs ({} with upsampling), max rel error {:.3e}, linear map {:.3e}, {:.2f} s",
                      kGradGraphs, with_upsample, worst, linear_err, secs)};
}

bool bit_equal(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

Outcome identity_at_init(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path data = work / "identity_data";
  generate_with_baseline(data, 6, 777);
  int mismatches = 0;
  for (HeadMode mode : {HeadMode::multiplicative, HeadMode::additive}) {
    RefineNetwork net = build_unet(UNetConfig{}, 99);
    net.set_head(mode);
    save_checkpoint(net, work / "identity.ckpt");
    EvalConfig cfg;
    cfg.checkpoint = work / "identity.ckpt";
    const EvalReport r = evaluate(data, cfg);
    const auto& b = r.variant("baseline");
    const auto& f = r.variant("refined");
    mismatches += !bit_equal(b.depth_error_m, f.depth_error_m) + !bit_equal(b.epe_px, f.epe_px) +
                  !bit_equal(b.d1_1px, f.d1_1px) + !bit_equal(b.d1_3px, f.d1_3px) +
                  (format_bins_csv(b.bins) != format_bins_csv(f.bins));
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kIdentitySeconds,
          fmt::format("{} mismatching metrics across both heads, {:.2f} s", mismatches, secs)};
}

// Shared by criteria 4 to 7.
struct SeededRun {
  HeadMode head;
  std::uint64_t seed;
  VariantReport baseline;
  VariantReport refined;
  double minutes = 0.0;
  std::vector<double> train_loss;

  double improvement() const { return 1.0 - refined.depth_error_m / baseline.depth_error_m; }
};

class TrainingStudy {
 public:
  explicit TrainingStudy(fs::path work) : work_(std::move(work)) {}

  const std::vector<SeededRun>& runs() {
    if (!done_) run_all();
    return runs_;
  }

  const SeededRun& find(HeadMode head, std::uint64_t seed) {
    for (const auto& r : runs())
      if (r.head == head && r.seed == seed) return r;
    throw std::logic_error("missing run");
  }

 private:
  void run_all() {
    done_ = true;
    const fs::path train_dir = work_ / "study_train";
    const fs::path test_dir = work_ / "study_test";
    generate_with_baseline(train_dir, kTrainSamples, kTrainDataSeed);
    generate_with_baseline(test_dir, kTestSamples, kTestDataSeed);
    for (std::uint64_t seed = 0; seed < kSeededRuns; ++seed) {
      for (HeadMode head : {HeadMode::multiplicative, HeadMode::additive}) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainConfig cfg;
        cfg.epochs = kEpochs;
        cfg.head = head;
        cfg.seed = seed;
        const fs::path ckpt = work_ / fmt::format("study_{}_{}.ckpt", to_string(head), seed);
        const TrainResult tr = train(train_dir, cfg, ckpt);
        EvalConfig ecfg;
        ecfg.checkpoint = tr.best_checkpoint;
        const EvalReport rep = evaluate(test_dir, ecfg);
        SeededRun run{head, seed, rep.variant("baseline"), rep.variant("refined"), seconds_since(t0) / 60.0, {}};
        for (const auto& e : tr.history) run.train_loss.push_back(e.train_loss);
        std::cout << fmt::format("  run head={} seed={}: depth error {:.4f} -> {:.4f} m, EPE {:.4f} -> {:.4f} px, "
                                 "a2 {:.5f} -> {:.5f}, {:.1f} min\n",
                                 to_string(head), seed, run.baseline.depth_error_m, run.refined.depth_error_m,
                                 run.baseline.epe_px, run.refined.epe_px, run.baseline.quad.a2,
                                 run.refined.quad.a2, run.minutes)
                  << std::flush;
        runs_.push_back(std::move(run));
      }
    }
  }

  fs::path work_;
  bool done_ = false;
  std::vector<SeededRun> runs_;
};

Outcome depth_error_improvement(TrainingStudy& study) {
  const SeededRun& r = study.find(HeadMode::multiplicative, 0);
  const double ratio = r.refined.depth_error_m / r.baseline.depth_error_m;
  return {ratio <= kDepthErrorRatio && r.minutes < kTrainingMinutes,
          fmt::format("refined {:.4f} m vs baseline {:.4f} m, ratio {:.4f} (limit {:.2f}), train+eval {:.1f} min on {} "
                      "thread(s)",
                      r.refined.depth_error_m, r.baseline.depth_error_m, ratio, kDepthErrorRatio, r.minutes,
                      num_threads())};
}

// Trainer property: the 5-epoch moving average of the training loss never rises.
Outcome loss_trend(TrainingStudy& study) {
  const std::vector<double>& loss = study.find(HeadMode::multiplicative, 0).train_loss;
  if (loss.size() < kLossWindow) return {false, fmt::format("only {} epochs logged", loss.size())};
  std::vector<double> avg;
  for (std::size_t i = 0; i + kLossWindow <= loss.size(); ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < kLossWindow; ++k) sum += loss[i + k];
    avg.push_back(sum / kLossWindow);
  }
  std::size_t rises = 0;
  for (std::size_t i = 1; i < avg.size(); ++i) rises += avg[i] > avg[i - 1];
  return {rises == 0, fmt::format("{} rises over {} windows, average {:.5f} -> {:.5f}", rises, avg.size(),
                                  avg.front(), avg.back())};
}

Outcome disparity_non_degradation(TrainingStudy& study) {
  const SeededRun& r = study.find(HeadMode::multiplicative, 0);
  const double ratio = r.refined.epe_px / r.baseline.epe_px;
  return {ratio <= kEpeRatio, fmt::format("refined EPE {:.4f} px vs baseline {:.4f} px, ratio {:.4f} (limit {:.2f})",
                                          r.refined.epe_px, r.baseline.epe_px, ratio, kEpeRatio)};
}

Outcome quadratic_mitigation(TrainingStudy& study) {
  int wins = 0;
  std::string list;
  for (std::uint64_t seed = 0; seed < kSeededRuns; ++seed) {
    const SeededRun& r = study.find(HeadMode::multiplicative, seed);
    const bool win = r.refined.quad.a2 < r.baseline.quad.a2;
    wins += win;
    list += fmt::format("{}{:.5f}<{:.5f}:{}", list.empty() ? "" : ", ", r.refined.quad.a2, r.baseline.quad.a2,
                        win ? "y" : "n");
  }
  return {wins >= kQuadMitigationMin,
          fmt::format("a2 lower in {}/{} runs (need {}): {}", wins, kSeededRuns, kQuadMitigationMin, list)};
}

Outcome mul_vs_add(TrainingStudy& study) {
  int wins = 0;
  std::string list;
  for (std::uint64_t seed = 0; seed < kSeededRuns; ++seed) {
    const double mul = study.find(HeadMode::multiplicative, seed).improvement();
    const double add = study.find(HeadMode::additive, seed).improvement();
    wins += mul >= add;
    list += fmt::format("{}mul {:.2f}% / add {:.2f}%", list.empty() ? "" : ", ", 100.0 * mul, 100.0 * add);
  }
  return {wins >= kMulBeatsAddMin,
          fmt::format("mul >= add in {}/{} runs (need {}): {}", wins, kSeededRuns, kMulBeatsAddMin, list)};
}

Outcome oracle_baseline(const fs::path& work) {
  const fs::path data = work / "oracle_data";
  fs::remove_all(data);
  cli_run({"gen", "--out", data.string(), "--count", "10", "--seed", "500"});

  const fs::path gt_dir = work / "oracle_gt";
  const fs::path shifted_dir = work / "oracle_shifted";
  fs::create_directories(gt_dir);
  fs::create_directories(shifted_dir);
  const Manifest m = read_manifest(data);
  for (std::size_t k = 0; k < m.entries.size(); ++k) {
    const ScalarField d_gt = read_pfm(m.resolve(m.entries[k].d_gt), FieldRole::disparity);
    ScalarField plus(d_gt.width(), d_gt.height(), FieldRole::disparity);
    for (std::size_t i = 0; i < d_gt.size(); ++i)
      if (d_gt.valid(i)) plus.set(i, d_gt[i] + 1.0);
    const std::string name = m.entries[k].name() + ".pfm";
    write_pfm(d_gt, gt_dir / name);
    write_pfm(plus, shifted_dir / name);
  }

  cli_run({"baseline", "--data", data.string(), "--ingest-dir", gt_dir.string()});
  const VariantReport exact = evaluate(data, EvalConfig{}).variant("baseline");

  cli_run({"baseline", "--data", data.string(), "--ingest-dir", shifted_dir.string()});
  const VariantReport shifted = evaluate(data, EvalConfig{}).variant("baseline");

  // D1 at half a pixel, pooled over the evaluation masks.
  const Manifest ms = read_manifest(data);
  const int d_max = resolve_d_max(std::nullopt, ms);
  std::size_t over = 0, total = 0;
  for (std::size_t k = 0; k < ms.entries.size(); ++k) {
    const PreparedSample s = prepare_sample(load_sample(ms, k), ms.rig, MatchParams{}, d_max, 100.0);
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
      if (!s.mask[i]) continue;
      ++total;
      over += std::abs(s.baseline.filled_disparity[i] - s.d_gt[i]) > 0.5;
    }
  }
  const double d1_half = total ? double(over) / double(total) : 0.0;

  const bool ok = exact.depth_error_m < kOracleDepthTol && exact.epe_px < kOracleEpeTol &&
                  std::abs(shifted.epe_px - 1.0) <= kShiftedEpeTol && shifted.d1_1px == 0.0 && d1_half == 1.0;
  return {ok, fmt::format("GT: depth error {:.3e} m, EPE {:.3e} px; GT+1: EPE 1{:+.3e}, D1-1px {}, D1-0.5px {}",
                          exact.depth_error_m, exact.epe_px, shifted.epe_px - 1.0, shifted.d1_1px, d1_half)};
}

Outcome format_round_trips(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = work / "formats";
  fs::create_directories(dir);
  Rng rng(31);
  int failures = 0;

  ScalarField f(37, 23, FieldRole::disparity);
  for (std::size_t i = 0; i < f.size(); ++i) f.set(i, double(float(rng.uniform(-100.0, 100.0))));
  f.invalidate(3);
  write_pfm(f, dir / "a.pfm");
  write_pfm(read_pfm(dir / "a.pfm"), dir / "b.pfm");
  failures += read_file_bytes(dir / "a.pfm") != read_file_bytes(dir / "b.pfm");

  for (std::size_t ch : {std::size_t{1}, std::size_t{3}}) {
    std::vector<double> v(31 * 17 * ch);
    for (double& x : v) x = double(rng.below(256)) / 255.0;
    const Image img(31, 17, ch, v);
    const fs::path a = dir / (ch == 1 ? "a.pgm" : "a.ppm");
    const fs::path b = dir / (ch == 1 ? "b.pgm" : "b.ppm");
    write_pnm(img, a);
    const Image back = read_pnm(a);
    failures += !(back == img);
    write_pnm(back, b);
    failures += read_file_bytes(a) != read_file_bytes(b);
  }

  const RefineNetwork net = build_unet(UNetConfig{}, 17);
  save_checkpoint(net, dir / "a.ckpt");
  save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
  const std::string bytes = read_file_bytes(dir / "a.ckpt");
  failures += bytes != read_file_bytes(dir / "b.ckpt");

  std::string corrupt = bytes;
  corrupt[corrupt.size() / 2] = static_cast<char>(corrupt[corrupt.size() / 2] ^ 0x10);
  bool crc_rejected = false;
  try {
    deserialize_checkpoint(corrupt);
  } catch (const FormatError& e) {
    crc_rejected = std::string(e.what()).find("CRC") != std::string::npos;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && crc_rejected && secs < kFormatSeconds,
          fmt::format("{} round-trip mismatches, corrupted checkpoint {}, {:.2f} s", failures,
                      crc_rejected ? "rejected by CRC" : "NOT rejected", secs)};
}

// gen -> baseline -> train -> eval -> analyze, as documented in the README.
void reproduction_sequence(const fs::path& dir) {
  fs::remove_all(dir);
  const std::string data = (dir / "data").string();
  cli_run({"gen", "--out", data, "--count", "12", "--seed", "1"});
  cli_run({"baseline", "--data", data});
  cli_run({"train", "--data", data, "--epochs", "3", "--ckpt-out", (dir / "net.ckpt").string()});
  cli_run({"eval", "--data", data, "--ckpt", (dir / "net.ckpt").string(), "--report-dir", (dir / "report").string()});
  cli_run({"analyze", "--report-dir", (dir / "report").string()});
}

Outcome determinism(const fs::path& work) {
  reproduction_sequence(work / "determinism_a");
  reproduction_sequence(work / "determinism_b");
  int compared = 0, differing = 0;
  std::string diffs;
  for (const auto& e : fs::directory_iterator(work / "determinism_a" / "report")) {
    if (e.path().extension() != ".csv") continue;
    ++compared;
    const fs::path other = work / "determinism_b" / "report" / e.path().filename();
    if (!fs::exists(other) || read_file_bytes(e.path()) != read_file_bytes(other)) {
      ++differing;
      diffs += " " + e.path().filename().string();
    }
  }
  return {compared >= 4 && differing == 0,
          fmt::format("{} report CSVs compared, {} differ{}", compared, differing, diffs)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depthref acceptance suite"};
  fs::path work = fs::temp_directory_path() / "depthref_acceptance";
  std::vector<int> only;
  std::size_t threads = 0;
  app.add_option("--work-dir", work, "Scratch directory (recreated)");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");
  CLI11_PARSE(app, argc, argv);

  set_num_threads(threads);
  spdlog::set_level(spdlog::level::warn);
  fs::remove_all(work);
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());

  TrainingStudy study(work);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    bool property = false;
  };
  const std::vector<Criterion> criteria{
      {1, "formula-fidelity", [] { return formula_fidelity(); }},
      {2, "autodiff-correctness", [] { return autodiff_correctness(); }},
      {3, "identity-at-initialization", [&] { return identity_at_init(work); }},
      {4, "depth-error-improvement", [&] { return depth_error_improvement(study); }},
      {4, "train-loss-trend", [&] { return loss_trend(study); }, true},
      {5, "disparity-non-degradation", [&] { return disparity_non_degradation(study); }},
      {6, "quadratic-mitigation", [&] { return quadratic_mitigation(study); }},
      {7, "multiplicative-vs-additive", [&] { return mul_vs_add(study); }},
      {8, "oracle-baseline", [&] { return oracle_baseline(work); }},
      {9, "format-round-trips", [&] { return format_round_trips(work); }},
      {10, "determinism", [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    failed += !o.pass;
    const std::string label = c.property ? fmt::format("property {}", c.name)
                                         : fmt::format("criterion {} {}", c.id, c.name);
    std::cout << fmt::format("{}: {} ({})", label, o.pass ? "PASS" : "FAIL", o.detail) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
