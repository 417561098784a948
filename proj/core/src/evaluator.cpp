#include "depthref/evaluator.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "depthref/checkpoint.hpp"
#include "depthref/io_formats.hpp"
#include "depthref/parallel.hpp"
#include "depthref/refine.hpp"
#include "depthref/trainer.hpp"

namespace depthref {

namespace {

void check_sizes(const ScalarField& a, const ScalarField& b, const EvalMask& mask, const char* what) {
  if (!a.same_shape(b) || mask.size() != a.size()) {
    throw std::invalid_argument(fmt::format("{}: estimate, ground truth and mask sizes differ", what));
  }
}

// Mean of g(|a - b|) over the mask.
template <typename Fn>
double masked_mean(const ScalarField& a, const ScalarField& b, const EvalMask& mask, const char* what,
                   Fn g) {
  check_sizes(a, b, mask, what);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    sum += g(std::abs(a[i] - b[i]));
    ++count;
  }
  if (count == 0) throw std::invalid_argument(fmt::format("{}: empty mask", what));
  return sum / static_cast<double>(count);
}

double median_sorted(const std::vector<double>& v) {
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string real(double v) { return std::isnan(v) ? std::string("nan") : fmt::format("{:.10g}", v); }

QuadCoeffs safe_quadfit(const std::vector<BinStat>& bins, const std::string& variant) {
  try {
    return quadfit(bins);
  } catch (const std::invalid_argument& e) {
    spdlog::warn("{}: no quadratic trend ({})", variant, e.what());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan};
  }
}

// Single-row field from a flat list of values.
ScalarField pooled(const std::vector<double>& values, FieldRole role) {
  ScalarField f(values.size(), 1, role);
  for (std::size_t i = 0; i < values.size(); ++i) f.set(i, values[i]);
  return f;
}

struct Pool {
  std::vector<double> z;
  std::vector<double> d;
};

VariantReport summarize(const std::string& name, const Pool& est, const Pool& gt, double bin_width) {
  const ScalarField z = pooled(est.z, FieldRole::depth);
  const ScalarField d = pooled(est.d, FieldRole::disparity);
  const ScalarField zg = pooled(gt.z, FieldRole::depth);
  const ScalarField dg = pooled(gt.d, FieldRole::disparity);
  const EvalMask all(gt.z.size(), 1);
  VariantReport r;
  r.variant = name;
  r.depth_error_m = mean_abs_depth_error(z, zg, all);
  r.epe_px = epe(d, dg, all);
  r.d1_1px = d1_rate(d, dg, all, 1.0);
  r.d1_3px = d1_rate(d, dg, all, 3.0);
  r.bins = bin_median_errors(z, zg, all, bin_width);
  r.quad = safe_quadfit(r.bins, name);
  return r;
}

const std::array<const char*, 2> kVariants{"baseline", "refined"};

}  // namespace

EvalMask make_eval_mask(const ScalarField& z_gt, const ScalarField& d_gt, const ScalarField& estimate,
                        double d_max, double depth_cap) {
  return supervision_mask(z_gt, d_gt, estimate, d_max, depth_cap);
}

double mean_abs_depth_error(const ScalarField& z, const ScalarField& z_gt, const EvalMask& mask) {
  return masked_mean(z, z_gt, mask, "depth error", [](double e) { return e; });
}

double epe(const ScalarField& d, const ScalarField& d_gt, const EvalMask& mask) {
  return masked_mean(d, d_gt, mask, "epe", [](double e) { return e; });
}

double d1_rate(const ScalarField& d, const ScalarField& d_gt, const EvalMask& mask, double threshold_px) {
  if (!(threshold_px > 0.0)) throw std::invalid_argument("d1: threshold must be positive");
  return masked_mean(d, d_gt, mask, "d1", [threshold_px](double e) { return e > threshold_px ? 1.0 : 0.0; });
}

ScalarField refined_disparity(const ScalarField& z, const CameraRig& rig) {
  return depth_to_disparity(z, rig);
}

std::vector<BinStat> bin_median_errors(const ScalarField& z, const ScalarField& z_gt, const EvalMask& mask,
                                       double bin_width_m) {
  if (!(bin_width_m > 0.0)) throw std::invalid_argument("bins: bin width must be positive");
  check_sizes(z, z_gt, mask, "bins");
  std::map<long long, std::vector<double>> groups;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const auto k = static_cast<long long>(std::floor(z_gt[i] / bin_width_m));
    groups[k].push_back(std::abs(z[i] - z_gt[i]) * 1000.0);
  }
  if (groups.empty()) throw std::invalid_argument("bins: empty mask");
  std::vector<BinStat> out;
  for (auto& [k, errors] : groups) {
    std::sort(errors.begin(), errors.end());
    out.push_back({(static_cast<double>(k) + 0.5) * bin_width_m, median_sorted(errors), errors.size()});
  }
  return out;
}

QuadCoeffs quadfit(std::span<const std::pair<double, double>> points) {
  std::vector<double> xs;
  for (const auto& p : points) xs.push_back(p.first);
  std::sort(xs.begin(), xs.end());
  if (std::unique(xs.begin(), xs.end()) - xs.begin() < 3) {
    throw std::invalid_argument("quadfit: need at least 3 distinct x values (rank-deficient design)");
  }
  // Normal equations A^T A c = A^T y with rows [x^2, x, 1].
  double m[3][4] = {};
  for (const auto& [x, y] : points) {
    const double row[3] = {x * x, x, 1.0};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += row[r] * row[c];
      m[r][3] += row[r] * y;
    }
  }
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    if (m[pivot][col] == 0.0) throw std::invalid_argument("quadfit: rank-deficient design matrix");
    std::swap(m[col], m[pivot]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double factor = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= factor * m[col][c];
    }
  }
  return {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
}

QuadCoeffs quadfit(const std::vector<BinStat>& bins) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(bins.size());
  for (const auto& b : bins) pts.emplace_back(b.center_m, b.median_error_mm);
  return quadfit(std::span<const std::pair<double, double>>(pts));
}

const VariantReport& EvalReport::variant(const std::string& name) const {
  for (const auto& v : variants) {
    if (v.variant == name) return v;
  }
  throw std::out_of_range(fmt::format("report has no variant '{}'", name));
}

std::string format_report_csv(const EvalReport& report) {
  std::string out = "variant,depth_error_m,epe_px,d1_1px,d1_3px,a2,a1,a0\n";
  for (const auto& v : report.variants) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", v.variant, real(v.depth_error_m), real(v.epe_px),
                       real(v.d1_1px), real(v.d1_3px), real(v.quad.a2), real(v.quad.a1), real(v.quad.a0));
  }
  return out;
}

std::string format_bins_csv(const std::vector<BinStat>& bins) {
  std::string out = "bin_center_m,median_error_mm,count\n";
  for (const auto& b : bins) out += fmt::format("{},{},{}\n", real(b.center_m), real(b.median_error_mm), b.count);
  return out;
}

EvalReport evaluate(const std::filesystem::path& manifest_path, const EvalConfig& cfg) {
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.entries.empty()) throw std::runtime_error("eval: dataset is empty");
  const int d_max = resolve_d_max(cfg.d_max, manifest);
  std::optional<RefineNetwork> net;
  if (cfg.checkpoint) net = load_checkpoint(*cfg.checkpoint);

  MatchParams match;
  match.d_max = d_max;
  const std::size_t n = manifest.entries.size();
  struct PerSample {
    PreparedSample prepared;
    ScalarField z_refined;
    ScalarField d_refined;
  };
  std::vector<PerSample> results(n);
  parallel_for(n, [&](std::size_t k) {
    PerSample& r = results[k];
    r.prepared = prepare_sample(load_sample(manifest, k), manifest.rig, match, d_max, cfg.depth_cap_m);
    if (!net) return;
    const BaselineView& b = r.prepared.baseline;
    r.z_refined = apply_head(b.z_a, net->infer(r.prepared.input), net->head());
    // d_a Z_a / Z equals b f_x / Z and reproduces d_a exactly when Z == Z_a.
    r.d_refined = ScalarField(b.z_a.width(), b.z_a.height(), FieldRole::disparity);
    for (std::size_t i = 0; i < b.z_a.size(); ++i) {
      if (r.z_refined.valid(i)) r.d_refined.set(i, b.filled_disparity[i] * (b.z_a[i] / r.z_refined[i]));
    }
  });

  Pool gt;
  Pool base;
  Pool refined;
  for (const auto& r : results) {
    const PreparedSample& s = r.prepared;
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
      if (!s.mask[i]) continue;
      gt.z.push_back(s.z_gt[i]);
      gt.d.push_back(s.d_gt[i]);
      base.z.push_back(s.baseline.z_a[i]);
      base.d.push_back(s.baseline.filled_disparity[i]);
      if (net) {
        refined.z.push_back(r.z_refined[i]);
        refined.d.push_back(r.d_refined[i]);
      }
    }
  }
  if (gt.z.empty()) throw std::runtime_error("eval: evaluation mask is empty for every sample");

  EvalReport report;
  report.pixel_count = gt.z.size();
  report.variants.push_back(summarize(kVariants[0], base, gt, cfg.bin_width_m));
  if (net) report.variants.push_back(summarize(kVariants[1], refined, gt, cfg.bin_width_m));

  if (!cfg.report_dir.empty()) {
    const auto& dir = cfg.report_dir;
    std::filesystem::create_directories(dir / "depth");
    write_file_atomic(dir / "report.csv", format_report_csv(report));
    for (const auto& v : report.variants) {
      write_file_atomic(dir / fmt::format("bins_{}.csv", v.variant), format_bins_csv(v.bins));
    }
    std::string index = net ? "sample\tmask\tgt\tbaseline\trefined\n" : "sample\tmask\tgt\tbaseline\n";
    for (std::size_t k = 0; k < n; ++k) {
      const PreparedSample& s = results[k].prepared;
      const std::string stem = fmt::format("depth/{:04d}", k);
      write_mask_pgm(s.mask, s.z_gt.width(), s.z_gt.height(), dir / (stem + "_mask.pgm"));
      write_pfm(s.z_gt, dir / (stem + "_gt.pfm"));
      write_pfm(s.baseline.z_a, dir / (stem + "_baseline.pfm"));
      index += fmt::format("{}\t{}_mask.pgm\t{}_gt.pfm\t{}_baseline.pfm", s.name, stem, stem, stem);
      if (net) {
        write_pfm(results[k].z_refined, dir / (stem + "_refined.pfm"));
        index += fmt::format("\t{}_refined.pfm", stem);
      }
      index += '\n';
    }
    write_file_atomic(dir / "eval_index.tsv", index);
  }
  return report;
}

std::vector<AnalysisRow> analyze(const std::filesystem::path& report_dir, double bin_width_m) {
  if (!(bin_width_m > 0.0)) throw std::invalid_argument("analyze: bin width must be positive");
  std::istringstream lines(read_file_bytes(report_dir / "eval_index.tsv"));
  std::string line;
  std::getline(lines, line);
  const bool has_refined = line.find("refined") != std::string::npos;
  const std::size_t variant_count = has_refined ? 2 : 1;

  Pool gt_pool;
  std::vector<Pool> est(variant_count);
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream fields(line);
    for (std::string c; std::getline(fields, c, '\t');) cols.push_back(c);
    if (cols.size() != 3 + variant_count) {
      throw FormatError(fmt::format("analyze: malformed eval_index.tsv row '{}'", line));
    }
    std::size_t w = 0;
    std::size_t h = 0;
    const auto mask = read_mask_pgm(report_dir / cols[1], w, h);
    const ScalarField gt = read_pfm(report_dir / cols[2], FieldRole::depth);
    std::vector<ScalarField> fields_v;
    for (std::size_t v = 0; v < variant_count; ++v) {
      fields_v.push_back(read_pfm(report_dir / cols[3 + v], FieldRole::depth));
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      gt_pool.z.push_back(gt[i]);
      for (std::size_t v = 0; v < variant_count; ++v) est[v].z.push_back(fields_v[v][i]);
    }
  }
  if (gt_pool.z.empty()) throw std::runtime_error("analyze: no masked pixels in the report");

  const ScalarField zg = pooled(gt_pool.z, FieldRole::depth);
  const EvalMask all(gt_pool.z.size(), 1);
  std::vector<AnalysisRow> rows;
  std::string csv = "variant,a2,a1,a0,bin_width_m,bins\n";
  for (std::size_t v = 0; v < variant_count; ++v) {
    AnalysisRow row;
    row.variant = kVariants[v];
    row.bins = bin_median_errors(pooled(est[v].z, FieldRole::depth), zg, all, bin_width_m);
    row.quad = safe_quadfit(row.bins, row.variant);
    csv += fmt::format("{},{},{},{},{},{}\n", row.variant, real(row.quad.a2), real(row.quad.a1),
                       real(row.quad.a0), real(bin_width_m), row.bins.size());
    write_file_atomic(report_dir / fmt::format("analysis_bins_{}.csv", row.variant), format_bins_csv(row.bins));
    rows.push_back(std::move(row));
  }
  write_file_atomic(report_dir / "analysis.csv", csv);
  return rows;
}

void write_shading_images(const std::filesystem::path& manifest_path,
                          const std::optional<std::filesystem::path>& checkpoint, double eps,
                          const std::filesystem::path& out_dir) {
  if (!(eps > 0.0)) throw std::invalid_argument("shade: eps must be positive");
  const Manifest manifest = read_manifest(manifest_path);
  std::optional<RefineNetwork> net;
  if (checkpoint) net = load_checkpoint(*checkpoint);
  const int d_max = resolve_d_max(std::nullopt, manifest);
  MatchParams match;
  match.d_max = d_max;
  std::filesystem::create_directories(out_dir);
  parallel_for(manifest.entries.size(), [&](std::size_t k) {
    const PreparedSample s = prepare_sample(load_sample(manifest, k), manifest.rig, match, d_max, 100.0);
    const std::string stem = fmt::format("{:04d}", k);
    write_pnm(shading_image(s.z_gt, eps), out_dir / (stem + "_gt.pgm"));
    write_pnm(shading_image(s.baseline.z_a, eps), out_dir / (stem + "_baseline.pgm"));
    if (net) {
      const ScalarField z = apply_head(s.baseline.z_a, net->infer(s.input), net->head());
      write_pnm(shading_image(z, eps), out_dir / (stem + "_refined.pgm"));
    }
  });
}

}  // namespace depthref
