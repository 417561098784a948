#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "depthref/evaluator.hpp"
#include "depthref/io_formats.hpp"
#include "depthref/parallel.hpp"
#include "depthref/scenegen.hpp"
#include "depthref/stereo_baseline.hpp"
#include "depthref/trainer.hpp"

namespace depthref::cli {

namespace {

namespace fs = std::filesystem;

using ConfigLines = std::vector<std::pair<std::string, std::string>>;

void print_config(std::ostream& out, const std::string& command, const ConfigLines& lines) {
  out << "[" << command << "]\n";
  for (const auto& [key, value] : lines) out << key << " = " << value << "\n";
  out.flush();
}

std::string opt_str(const std::optional<int>& v) { return v ? fmt::format("{}", *v) : std::string("auto"); }

std::string opt_str(const std::optional<fs::path>& v) { return v ? v->string() : std::string("none"); }

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

struct GenArgs {
  fs::path out;
  std::size_t count = 1;
  SceneSpec spec;
};

struct BaselineArgs {
  fs::path data;
  std::optional<int> dmax;
  MatchParams match;
  std::optional<fs::path> ingest_dir;
};

struct TrainArgs {
  fs::path data;
  TrainConfig cfg;
  std::string head = "mul";
  std::optional<int> dmax;
  fs::path ckpt_out;
};

struct EvalArgs {
  fs::path data;
  std::optional<fs::path> ckpt;
  std::optional<int> dmax;
  fs::path report_dir;
  double bin_width = 1.0;
  double depth_cap = 100.0;
};

struct AnalyzeArgs {
  fs::path report_dir;
  double bin_width = 1.0;
};

struct ShadeArgs {
  fs::path data;
  std::optional<fs::path> ckpt;
  double eps = 0.01;
  fs::path out;
};

void run_gen(const GenArgs& a, const Globals& g, std::ostream& out) {
  SceneSpec spec = a.spec;
  spec.seed = g.seed;
  print_config(out, "gen",
               {{"out", a.out.string()},
                {"count", fmt::format("{}", a.count)},
                {"width", fmt::format("{}", spec.width)},
                {"height", fmt::format("{}", spec.height)},
                {"baseline_m", fmt::format("{}", spec.rig.baseline_m)},
                {"focal_px", fmt::format("{}", spec.rig.focal_x_px)},
                {"objects", fmt::format("{}", spec.object_count)},
                {"z_min", fmt::format("{}", spec.z_min)},
                {"z_max", fmt::format("{}", spec.z_max)},
                {"seed", fmt::format("{}", spec.seed)},
                {"threads", fmt::format("{}", num_threads())}});
  const Manifest m = generate_dataset(spec, a.count, a.out);
  out << fmt::format("wrote {} samples to {}\n", m.entries.size(), a.out.string());
}

void run_baseline(const BaselineArgs& a, std::ostream& out) {
  Manifest manifest = read_manifest(a.data);
  MatchParams match = a.match;
  match.d_max = a.dmax.value_or(manifest.d_max.value_or(match.d_max));
  match.validate();
  print_config(out, "baseline",
               {{"data", a.data.string()},
                {"dmax", fmt::format("{}", match.d_max)},
                {"census", fmt::format("{}", match.census_window)},
                {"agg", fmt::format("{}", match.agg_window)},
                {"lr_threshold", fmt::format("{}", match.lr_threshold)},
                {"ingest_dir", opt_str(a.ingest_dir)},
                {"threads", fmt::format("{}", num_threads())}});
  if (a.ingest_dir) {
    for (std::size_t k = 0; k < manifest.entries.size(); ++k) {
      ingest_external_disparity(manifest, k, *a.ingest_dir / (manifest.entries[k].name() + ".pfm"));
    }
  } else {
    for (std::size_t k = 0; k < manifest.entries.size(); ++k) {
      const LoadedSample s = load_sample(manifest, k);
      store_baseline_disparity(manifest, k, compute_disparity(s.left, s.right, match));
    }
  }
  manifest.d_max = match.d_max;
  write_manifest(manifest);
  out << fmt::format("baseline disparity stored for {} samples\n", manifest.entries.size());
}

void run_train(TrainArgs a, const Globals& g, std::ostream& out) {
  a.cfg.head = parse_head_mode(a.head);
  a.cfg.seed = g.seed;
  a.cfg.d_max = a.dmax;
  a.cfg.validate();
  print_config(out, "train",
               {{"data", a.data.string()},
                {"epochs", fmt::format("{}", a.cfg.epochs)},
                {"lr", fmt::format("{}", a.cfg.learning_rate)},
                {"batch", fmt::format("{}", a.cfg.batch_size)},
                {"head", to_string(a.cfg.head)},
                {"dmax", opt_str(a.cfg.d_max)},
                {"z_cap", fmt::format("{}", a.cfg.z_cap)},
                {"val_fraction", fmt::format("{}", a.cfg.val_fraction)},
                {"levels", fmt::format("{}", a.cfg.net.levels)},
                {"base_channels", fmt::format("{}", a.cfg.net.base_channels)},
                {"ckpt_out", a.ckpt_out.string()},
                {"seed", fmt::format("{}", a.cfg.seed)},
                {"threads", fmt::format("{}", num_threads())}});
  if (a.ckpt_out.has_parent_path()) fs::create_directories(a.ckpt_out.parent_path());
  const TrainResult r = train(a.data, a.cfg, a.ckpt_out);
  out << fmt::format("final checkpoint {}\nbest checkpoint {}\nlog {}\n", r.checkpoint.string(),
                     r.best_checkpoint.string(), r.log.string());
}

void run_eval(const EvalArgs& a, std::ostream& out) {
  EvalConfig cfg;
  cfg.checkpoint = a.ckpt;
  cfg.d_max = a.dmax;
  cfg.report_dir = a.report_dir;
  cfg.bin_width_m = a.bin_width;
  cfg.depth_cap_m = a.depth_cap;
  print_config(out, "eval",
               {{"data", a.data.string()},
                {"ckpt", opt_str(a.ckpt)},
                {"dmax", opt_str(a.dmax)},
                {"report_dir", a.report_dir.string()},
                {"bin_width", fmt::format("{}", a.bin_width)},
                {"depth_cap", fmt::format("{}", a.depth_cap)},
                {"threads", fmt::format("{}", num_threads())}});
  const EvalReport report = evaluate(a.data, cfg);
  out << format_report_csv(report);
}

void run_analyze(const AnalyzeArgs& a, std::ostream& out) {
  print_config(out, "analyze",
               {{"report_dir", a.report_dir.string()}, {"bin_width", fmt::format("{}", a.bin_width)}});
  for (const auto& row : analyze(a.report_dir, a.bin_width)) {
    out << fmt::format("{}: a2={:.6g} a1={:.6g} a0={:.6g} over {} bins\n", row.variant, row.quad.a2,
                       row.quad.a1, row.quad.a0, row.bins.size());
  }
}

void run_shade(const ShadeArgs& a, std::ostream& out) {
  print_config(out, "shade",
               {{"data", a.data.string()},
                {"ckpt", opt_str(a.ckpt)},
                {"eps", fmt::format("{}", a.eps)},
                {"out", a.out.string()},
                {"threads", fmt::format("{}", num_threads())}});
  write_shading_images(a.data, a.ckpt, a.eps, a.out);
  out << fmt::format("shading images written to {}\n", a.out.string());
}

void configure_logging() {
  static const bool once = [] {
    auto logger = spdlog::stderr_logger_st("depthref");
    logger->set_pattern("%^[%l]%$ %v");
    spdlog::set_default_logger(logger);
    return true;
  }();
  (void)once;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"Stereo depth refinement pipeline", "depthref"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = available cores)")->capture_default_str();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic stereo dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--width", gen.spec.width, "Image width")->capture_default_str();
  gen_cmd->add_option("--height", gen.spec.height, "Image height")->capture_default_str();
  gen_cmd->add_option("--baseline-m", gen.spec.rig.baseline_m, "Stereo baseline in metres")->capture_default_str();
  gen_cmd->add_option("--focal-px", gen.spec.rig.focal_x_px, "Horizontal focal length in pixels")
      ->capture_default_str();
  gen_cmd->add_option("--objects", gen.spec.object_count, "Objects per scene")->capture_default_str();
  gen_cmd->add_option("--z-min", gen.spec.z_min, "Nearest object depth in metres")->capture_default_str();
  gen_cmd->add_option("--z-max", gen.spec.z_max, "Farthest background depth in metres")->capture_default_str();

  BaselineArgs base;
  auto* base_cmd = app.add_subcommand("baseline", "Compute (or ingest) baseline disparity for a dataset");
  base_cmd->add_option("--data", base.data, "Dataset directory or manifest")->required();
  base_cmd->add_option("--dmax", base.dmax, "Maximum disparity searched");
  base_cmd->add_option("--census", base.match.census_window, "Census window")->capture_default_str();
  base_cmd->add_option("--agg", base.match.agg_window, "Aggregation window")->capture_default_str();
  base_cmd->add_option("--lr-threshold", base.match.lr_threshold, "Left-right check tolerance in px")
      ->capture_default_str();
  base_cmd->add_option("--ingest-dir", base.ingest_dir,
                       "Directory of external <sample>.pfm disparity maps to use instead of matching");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the refinement network");
  train_cmd->add_option("--data", tr.data, "Dataset directory or manifest")->required();
  train_cmd->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--lr", tr.cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch", tr.cfg.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--head", tr.head, "Residual head: mul or add")
      ->capture_default_str()
      ->check(CLI::IsMember({"mul", "add"}));
  train_cmd->add_option("--dmax", tr.dmax, "Mask limit on ground-truth disparity");
  train_cmd->add_option("--val-fraction", tr.cfg.val_fraction, "Held-out fraction for best checkpoint")
      ->capture_default_str();
  train_cmd->add_option("--levels", tr.cfg.net.levels, "U-Net levels")->capture_default_str();
  train_cmd->add_option("--base-channels", tr.cfg.net.base_channels, "U-Net base width")->capture_default_str();
  train_cmd->add_option("--ckpt-out", tr.ckpt_out, "Checkpoint path")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate baseline and refined depth");
  eval_cmd->add_option("--data", ev.data, "Dataset directory or manifest")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint; baseline only when omitted");
  eval_cmd->add_option("--dmax", ev.dmax, "Mask limit on ground-truth disparity");
  eval_cmd->add_option("--report-dir", ev.report_dir, "Report directory")->required();
  eval_cmd->add_option("--bin-width", ev.bin_width, "Depth bin width in metres")->capture_default_str();
  eval_cmd->add_option("--depth-cap", ev.depth_cap, "Mask limit on ground-truth depth")->capture_default_str();

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Re-bin depth errors and fit the quadratic trend");
  analyze_cmd->add_option("--report-dir", an.report_dir, "Report directory written by eval")->required();
  analyze_cmd->add_option("--bin-width", an.bin_width, "Depth bin width in metres")->capture_default_str();

  ShadeArgs sh;
  auto* shade_cmd = app.add_subcommand("shade", "Write shading images of depth maps");
  shade_cmd->add_option("--data", sh.data, "Dataset directory or manifest")->required();
  shade_cmd->add_option("--ckpt", sh.ckpt, "Checkpoint for the refined variant");
  shade_cmd->add_option("--eps", sh.eps, "Gradient-magnitude offset")->capture_default_str();
  shade_cmd->add_option("--out", sh.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    set_num_threads(g.threads);
    if (*gen_cmd) {
      run_gen(gen, g, out);
    } else if (*base_cmd) {
      run_baseline(base, out);
    } else if (*train_cmd) {
      run_train(tr, g, out);
    } else if (*eval_cmd) {
      run_eval(ev, out);
    } else if (*analyze_cmd) {
      run_analyze(an, out);
    } else if (*shade_cmd) {
      run_shade(sh, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace depthref::cli
