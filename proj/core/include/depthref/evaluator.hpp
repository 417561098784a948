#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "depthref/geometry.hpp"

namespace depthref {

using EvalMask = std::vector<std::uint8_t>;

/// Ground truth valid, estimate valid, d_gt <= d_max and z_gt <= depth_cap.
EvalMask make_eval_mask(const ScalarField& z_gt, const ScalarField& d_gt,
                        const ScalarField& estimate, double d_max, double depth_cap = 100.0);

// All metrics below throw std::invalid_argument on an empty mask or on
// mismatched sizes.
double mean_abs_depth_error(const ScalarField& z, const ScalarField& z_gt, const EvalMask& mask);
double epe(const ScalarField& d, const ScalarField& d_gt, const EvalMask& mask);
/// Fraction of masked pixels with |d - d_gt| > threshold_px (strict).
double d1_rate(const ScalarField& d, const ScalarField& d_gt, const EvalMask& mask, double threshold_px);

ScalarField refined_disparity(const ScalarField& z, const CameraRig& rig);

struct BinStat {
  double center_m = 0.0;
  double median_error_mm = 0.0;
  std::size_t count = 0;
};

/// Groups masked pixels by floor(z_gt / bin_width); per-bin median of
/// |z - z_gt| in millimetres, centre at (k + 0.5) bin_width. Empty bins are
/// omitted; even counts average the two middle values.
std::vector<BinStat> bin_median_errors(const ScalarField& z, const ScalarField& z_gt,
                                       const EvalMask& mask, double bin_width_m = 1.0);

struct QuadCoeffs {
  double a2 = 0.0;
  double a1 = 0.0;
  double a0 = 0.0;
};

/// Least-squares y = a2 x^2 + a1 x + a0 through the normal equations.
/// Throws std::invalid_argument with fewer than 3 distinct x values.
QuadCoeffs quadfit(std::span<const std::pair<double, double>> points);
QuadCoeffs quadfit(const std::vector<BinStat>& bins);

struct VariantReport {
  std::string variant;
  double depth_error_m = 0.0;
  double epe_px = 0.0;
  double d1_1px = 0.0;
  double d1_3px = 0.0;
  std::vector<BinStat> bins;
  QuadCoeffs quad;  // NaN when the bins cannot support a fit
};

struct EvalReport {
  std::vector<VariantReport> variants;  // "baseline", then "refined" when a checkpoint is given
  std::size_t pixel_count = 0;

  const VariantReport& variant(const std::string& name) const;
};

struct EvalConfig {
  std::optional<std::filesystem::path> checkpoint;
  /// Falls back to the manifest's d_max, then the block-matching default.
  std::optional<int> d_max;
  double depth_cap_m = 100.0;
  double bin_width_m = 1.0;
  /// Report directory; nothing is written when empty.
  std::filesystem::path report_dir;
};

/// Pools masked pixels over the whole dataset (fixed sample order). Writes
/// report.csv, bins_<variant>.csv, eval_index.tsv and per-sample depth maps
/// under report_dir.
EvalReport evaluate(const std::filesystem::path& manifest_path, const EvalConfig& cfg);

std::string format_report_csv(const EvalReport& report);
std::string format_bins_csv(const std::vector<BinStat>& bins);

struct AnalysisRow {
  std::string variant;
  QuadCoeffs quad;
  std::vector<BinStat> bins;
};

/// Re-bins the depth maps written by evaluate and refits the trend; writes
/// analysis.csv and analysis_bins_<variant>.csv into report_dir.
std::vector<AnalysisRow> analyze(const std::filesystem::path& report_dir, double bin_width_m);

/// Writes shading images (gt, baseline and, with a checkpoint, refined) for
/// every sample into out_dir as NNNN_<variant>.pgm (NNNN = manifest row).
void write_shading_images(const std::filesystem::path& manifest_path,
                          const std::optional<std::filesystem::path>& checkpoint, double eps,
                          const std::filesystem::path& out_dir);

}  // namespace depthref
