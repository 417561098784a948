#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "depthref/autodiff.hpp"
#include "depthref/geometry.hpp"
#include "depthref/imaging.hpp"

namespace depthref {

enum class HeadMode : std::uint8_t { multiplicative, additive };

const char* to_string(HeadMode mode);
/// Accepts "mul"/"multiplicative" and "add"/"additive".
HeadMode parse_head_mode(const std::string& text);

struct UNetConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 16;
  std::size_t in_channels = 3;
  double leaky_slope = 0.1;

  /// Channel width of level l (0 = full resolution): base * (l + 1).
  std::size_t channels(std::size_t level) const { return base_channels * (level + 1); }
  void validate() const;
};

/// Closed-form parameter count of the architecture built by build_unet.
std::size_t unet_parameter_count(const UNetConfig& cfg);

/// U-Net: 3x3 stem, `levels` stride-2 3x3 encoder convs, decoder levels of
/// nearest x2 upsample + skip concat + 3x3 conv, leaky ReLU after every conv
/// but the 1x1 linear head. Parameters are ordered as names() lists them.
class RefineNetwork {
 public:
  RefineNetwork() = default;
  RefineNetwork(UNetConfig cfg, std::vector<ad::Tensor> params);

  const UNetConfig& config() const { return cfg_; }
  /// Head the network was trained for; travels with the checkpoint.
  HeadMode head() const { return head_; }
  void set_head(HeadMode mode) { head_ = mode; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<ad::Tensor>& params() { return params_; }
  const std::vector<ad::Tensor>& params() const { return params_; }
  std::size_t parameter_count() const;

  /// Records the forward pass; `params` are the tape handles of params().
  /// input: 1 x in_channels x H x W. Returns 1 x 1 x H x W.
  ad::Var forward(ad::Tape& tape, ad::Var input, std::span<const ad::Var> params) const;

  /// Registers params() on the tape as slots 0..n-1 and returns their handles.
  std::vector<ad::Var> register_params(ad::Tape& tape) const;

  /// Forward pass without gradients; returns the 1-channel output as a field.
  ScalarField infer(const ad::Tensor& input) const;

  /// Parameter names and shapes for a configuration.
  static std::vector<std::pair<std::string, std::vector<std::size_t>>> layout(const UNetConfig& cfg);

 private:
  UNetConfig cfg_;
  HeadMode head_ = HeadMode::multiplicative;
  std::vector<std::string> names_;
  std::vector<ad::Tensor> params_;
};

/// He-uniform weights, zero biases, zero head. Values are rounded to 32-bit
/// floats so a checkpoint reproduces them exactly.
RefineNetwork build_unet(UNetConfig cfg, std::uint64_t seed);

/// Rounds every element to the nearest 32-bit float.
void round_to_float32(std::vector<ad::Tensor>& params);

/// Network input [clamp(z_a / z_cap, 0, 1.5), gray(left), gray(warped)] as
/// 1 x 3 x H x W. Invalid or non-finite z_a maps to 1.5.
ad::Tensor prepare_inputs(const ScalarField& z_a, const Image& left, const WarpedImage& warped,
                          double z_cap = 100.0);

/// multiplicative: Z_a (1 + f); additive: Z_a + f. Floor of 1e-3 m, validity
/// taken from z_a.
ScalarField apply_head(const ScalarField& z_a, const ScalarField& f_out, HeadMode mode);

/// Everything the network and the metrics need from a baseline disparity.
struct BaselineView {
  ScalarField disparity;         // as estimated; mask = usable pixels
  ScalarField filled_disparity;  // holes filled, same mask
  ScalarField z_a;               // depth of the filled disparity, mask of `disparity`
  WarpedImage warped;            // right image warped with the filled disparity
};

BaselineView make_baseline_view(const Image& right, const ScalarField& disparity,
                                const CameraRig& rig);

/// Masked mean |(z_gt - z_a) / z_a - g| where g = f (multiplicative) or
/// f / z_a (additive). Only f carries gradient. Pixels outside the mask never
/// read z_gt. An empty mask yields 0 with zero gradients.
ad::Var loss_range_invariant(ad::Tape& tape, const ScalarField& z_gt, const ScalarField& z_a,
                             ad::Var f_out, const std::vector<std::uint8_t>& mask,
                             HeadMode head = HeadMode::multiplicative);

/// Masked mean |z_gt - z_a (1 + f)|.
ad::Var loss_direct_depth(ad::Tape& tape, const ScalarField& z_gt, const ScalarField& z_a,
                          ad::Var f_out, const std::vector<std::uint8_t>& mask);

/// Training/evaluation mask: ground truth valid, z_a valid, z_gt <= z_cap,
/// d_gt <= d_max.
std::vector<std::uint8_t> supervision_mask(const ScalarField& z_gt, const ScalarField& d_gt,
                                           const ScalarField& z_a, double d_max,
                                           double z_cap = 100.0);

}  // namespace depthref
