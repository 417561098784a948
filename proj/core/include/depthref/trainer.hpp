#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "depthref/io_formats.hpp"
#include "depthref/refine.hpp"
#include "depthref/stereo_baseline.hpp"

namespace depthref {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  HeadMode head = HeadMode::multiplicative;
  std::uint64_t seed = 0;
  double z_cap = 100.0;
  /// Mask limit on d_gt; falls back to the manifest's d_max, then MatchParams.
  std::optional<int> d_max;
  /// Trailing fraction of the manifest held out for best-checkpoint selection.
  double val_fraction = 0.1;
  double flip_probability = 0.5;
  UNetConfig net{};

  void validate() const;
};

struct AdamState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const std::vector<ad::Tensor>& params);
};

/// One bias-corrected Adam update in place. Throws std::invalid_argument on
/// shape mismatch.
void adam_step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads,
               AdamState& state, const TrainConfig& cfg);

/// A dataset sample with its baseline already turned into network inputs.
struct PreparedSample {
  std::string name;
  Image left;
  ScalarField z_gt;
  ScalarField d_gt;
  BaselineView baseline;
  ad::Tensor input;
  std::vector<std::uint8_t> mask;
};

/// Uses the stored baseline disparity, or runs block matching with `match`
/// when the manifest has none.
PreparedSample prepare_sample(const LoadedSample& sample, const CameraRig& rig,
                              const MatchParams& match, double d_max, double z_cap);

/// d_max used for masks: explicit value, else the manifest's, else the
/// block-matching default.
int resolve_d_max(std::optional<int> explicit_d_max, const Manifest& manifest);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_depth_error_m = 0.0;  // NaN without a validation split
};

struct TrainResult {
  RefineNetwork network;
  std::vector<EpochStats> history;
  std::filesystem::path checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log;
};

/// Trains from a zero-head network. Writes the final checkpoint to ckpt_out,
/// the best one (lowest validation depth error, or lowest training loss
/// without a validation split) to ckpt_out + ".best" and the per-epoch log to
/// ckpt_out + ".log.csv". Throws on an empty dataset, unreadable files or a
/// non-finite parameter.
TrainResult train(const std::filesystem::path& manifest_path, const TrainConfig& cfg,
                  const std::filesystem::path& ckpt_out);

/// Mean absolute depth error of refined depth, pooled over the masks.
double refined_depth_error(const RefineNetwork& net, const std::vector<PreparedSample>& samples,
                           HeadMode head);

}  // namespace depthref
