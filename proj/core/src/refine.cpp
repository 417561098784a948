#include "depthref/refine.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "depthref/rng.hpp"
#include "depthref/stereo_baseline.hpp"

namespace depthref {

namespace {

constexpr double kDepthFloor = 1e-3;
constexpr double kInputClamp = 1.5;

using Shape = std::vector<std::size_t>;

Shape conv_shape(std::size_t co, std::size_t ci, std::size_t k) { return {co, ci, k, k}; }

}  // namespace

const char* to_string(HeadMode mode) {
  return mode == HeadMode::multiplicative ? "mul" : "add";
}

HeadMode parse_head_mode(const std::string& text) {
  if (text == "mul" || text == "multiplicative") return HeadMode::multiplicative;
  if (text == "add" || text == "additive") return HeadMode::additive;
  throw std::invalid_argument(fmt::format("unknown head mode '{}' (expected mul or add)", text));
}

void UNetConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("unet: levels must be at least 1");
  if (base_channels < 1) throw std::invalid_argument("unet: base_channels must be at least 1");
  if (in_channels < 1) throw std::invalid_argument("unet: in_channels must be at least 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("unet: leaky_slope must lie in [0, 1)");
  }
}

std::size_t unet_parameter_count(const UNetConfig& cfg) {
  const auto conv = [](std::size_t ci, std::size_t co, std::size_t k) { return co * ci * k * k + co; };
  std::size_t n = conv(cfg.in_channels, cfg.channels(0), 3);
  for (std::size_t l = 1; l <= cfg.levels; ++l) {
    n += conv(cfg.channels(l - 1), cfg.channels(l), 3);
    n += conv(cfg.channels(l) + cfg.channels(l - 1), cfg.channels(l - 1), 3);
  }
  return n + conv(cfg.channels(0), 1, 1);
}

std::vector<std::pair<std::string, Shape>> RefineNetwork::layout(const UNetConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  const auto conv = [&](const std::string& name, std::size_t ci, std::size_t co, std::size_t k) {
    out.emplace_back(name + ".weight", conv_shape(co, ci, k));
    out.emplace_back(name + ".bias", Shape{co});
  };
  conv("stem", cfg.in_channels, cfg.channels(0), 3);
  for (std::size_t l = 1; l <= cfg.levels; ++l) {
    conv(fmt::format("enc{}", l), cfg.channels(l - 1), cfg.channels(l), 3);
  }
  for (std::size_t l = cfg.levels; l >= 1; --l) {
    conv(fmt::format("dec{}", l), cfg.channels(l) + cfg.channels(l - 1), cfg.channels(l - 1), 3);
  }
  conv("head", cfg.channels(0), 1, 1);
  return out;
}

RefineNetwork::RefineNetwork(UNetConfig cfg, std::vector<ad::Tensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  const auto lay = layout(cfg_);
  if (lay.size() != params_.size()) {
    throw std::invalid_argument(fmt::format("refine network: expected {} parameter tensors, got {}",
                                            lay.size(), params_.size()));
  }
  for (std::size_t k = 0; k < lay.size(); ++k) {
    if (params_[k].shape() != lay[k].second) {
      throw std::invalid_argument(fmt::format("refine network: {} has shape {}, expected {}",
                                              lay[k].first, ad::shape_string(params_[k].shape()),
                                              ad::shape_string(lay[k].second)));
    }
    names_.push_back(lay[k].first);
  }
}

std::size_t RefineNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

std::vector<ad::Var> RefineNetwork::register_params(ad::Tape& tape) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (std::size_t k = 0; k < params_.size(); ++k) vars.push_back(tape.parameter(k, params_[k]));
  return vars;
}

ad::Var RefineNetwork::forward(ad::Tape& tape, ad::Var input, std::span<const ad::Var> p) const {
  if (p.size() != params_.size()) throw std::invalid_argument("refine forward: parameter count mismatch");
  const auto& in = tape.value(input);
  if (in.rank() != 4 || in.dim(1) != cfg_.in_channels) {
    throw std::invalid_argument(fmt::format("refine forward: input shape {} does not match in_channels {}",
                                            ad::shape_string(in.shape()), cfg_.in_channels));
  }
  const double slope = cfg_.leaky_slope;
  std::size_t k = 0;
  const auto conv = [&](ad::Var x, std::size_t stride, std::size_t pad) {
    const ad::Var out = tape.conv2d(x, p[k], p[k + 1], stride, pad);
    k += 2;
    return out;
  };

  std::vector<ad::Var> skips;
  ad::Var x = tape.leaky_relu(conv(input, 1, 1), slope);
  skips.push_back(x);
  for (std::size_t l = 1; l <= cfg_.levels; ++l) {
    x = tape.leaky_relu(conv(x, 2, 1), slope);
    skips.push_back(x);
  }
  for (std::size_t l = cfg_.levels; l >= 1; --l) {
    const ad::Var skip = skips[l - 1];
    const auto& s = tape.value(skip);
    x = tape.upsample2x(x, s.dim(2), s.dim(3));
    x = tape.concat_channels(x, skip);
    x = tape.leaky_relu(conv(x, 1, 1), slope);
  }
  return conv(x, 1, 0);
}

ScalarField RefineNetwork::infer(const ad::Tensor& input) const {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const auto& t : params_) vars.push_back(tape.constant(t));
  const ad::Var in = tape.constant(input);
  const auto& out = tape.value(forward(tape, in, vars));
  const std::size_t h = out.dim(2);
  const std::size_t w = out.dim(3);
  ScalarField f(w, h, FieldRole::generic);
  for (std::size_t i = 0; i < w * h; ++i) f.set(i, out[i]);
  return f;
}

void round_to_float32(std::vector<ad::Tensor>& params) {
  for (auto& t : params) {
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  }
}

RefineNetwork build_unet(UNetConfig cfg, std::uint64_t seed) {
  cfg.validate();
  cfg.leaky_slope = static_cast<double>(static_cast<float>(cfg.leaky_slope));
  Rng rng(mix64(seed ^ 0x756e6574ULL));
  std::vector<ad::Tensor> params;
  for (const auto& [name, shape] : RefineNetwork::layout(cfg)) {
    ad::Tensor t(shape, 0.0);
    const bool is_head = name.rfind("head.", 0) == 0;
    if (shape.size() == 4 && !is_head) {
      // He-uniform for leaky ReLU: bound = sqrt(6 / ((1 + slope^2) fan_in)).
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double bound = std::sqrt(6.0 / ((1.0 + cfg.leaky_slope * cfg.leaky_slope) * fan_in));
      for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    }
    params.push_back(std::move(t));
  }
  round_to_float32(params);
  return RefineNetwork(cfg, std::move(params));
}

ad::Tensor prepare_inputs(const ScalarField& z_a, const Image& left, const WarpedImage& warped,
                          double z_cap) {
  if (!(z_cap > 0.0)) throw std::invalid_argument("prepare_inputs: z_cap must be positive");
  const std::size_t w = z_a.width();
  const std::size_t h = z_a.height();
  if (left.width() != w || left.height() != h || warped.image.width() != w ||
      warped.image.height() != h) {
    throw std::invalid_argument(fmt::format(
        "prepare_inputs: dimension mismatch (depth {}x{}, left {}x{}, warped {}x{})", w, h,
        left.width(), left.height(), warped.image.width(), warped.image.height()));
  }
  const Image gl = left.to_gray();
  const Image gw = warped.image.to_gray();
  ad::Tensor t({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double z = z_a.value(x, y);
      t.at(0, 0, y, x) = (z_a.valid(x, y) && std::isfinite(z)) ? std::clamp(z / z_cap, 0.0, kInputClamp)
                                                                 : kInputClamp;
      t.at(0, 1, y, x) = gl.at(x, y);
      t.at(0, 2, y, x) = gw.at(x, y);
    }
  }
  return t;
}

ScalarField apply_head(const ScalarField& z_a, const ScalarField& f_out, HeadMode mode) {
  if (!z_a.same_shape(f_out)) throw std::invalid_argument("apply_head: shape mismatch");
  ScalarField z(z_a.width(), z_a.height(), FieldRole::depth);
  for (std::size_t i = 0; i < z_a.size(); ++i) {
    if (!z_a.valid(i)) continue;
    const double za = z_a[i];
    const double f = f_out[i];
    const double refined = mode == HeadMode::multiplicative ? za * (1.0 + f) : za + f;
    z.set(i, std::max(refined, kDepthFloor));
  }
  return z;
}

BaselineView make_baseline_view(const Image& right, const ScalarField& disparity,
                                const CameraRig& rig) {
  BaselineView v;
  v.disparity = disparity;
  v.disparity.set_role(FieldRole::disparity);
  v.filled_disparity = fill_invalid(v.disparity);
  ScalarField all_valid = v.filled_disparity;
  for (std::size_t i = 0; i < all_valid.size(); ++i) all_valid.set(i, all_valid[i]);
  v.z_a = disparity_to_depth(all_valid, rig);
  for (std::size_t i = 0; i < v.z_a.size(); ++i) {
    if (!v.disparity.valid(i)) v.z_a.set_valid_only(i, false);
  }
  v.warped = warp_right_to_left(right, all_valid);
  return v;
}

namespace {

void check_loss_shapes(const ad::Tape& tape, const ScalarField& z_gt, const ScalarField& z_a,
                       ad::Var f_out, const std::vector<std::uint8_t>& mask) {
  const auto& f = tape.value(f_out);
  if (!z_gt.same_shape(z_a) || f.numel() != z_a.size() || mask.size() != z_a.size()) {
    throw std::invalid_argument("loss: z_gt, z_a, f_out and mask must cover the same pixels");
  }
}

ad::Tensor field_tensor(const ad::Tensor& like) { return ad::Tensor(like.shape(), 0.0); }

void warn_if_empty(const std::vector<std::uint8_t>& mask) {
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    spdlog::warn("loss: empty mask, returning 0");
  }
}

}  // namespace

ad::Var loss_range_invariant(ad::Tape& tape, const ScalarField& z_gt, const ScalarField& z_a,
                             ad::Var f_out, const std::vector<std::uint8_t>& mask, HeadMode head) {
  check_loss_shapes(tape, z_gt, z_a, f_out, mask);
  warn_if_empty(mask);
  ad::Tensor target = field_tensor(tape.value(f_out));
  ad::Tensor inv_za = field_tensor(tape.value(f_out));
  for (std::size_t i = 0; i < z_a.size(); ++i) {
    if (!mask[i]) continue;
    target[i] = (z_gt[i] - z_a[i]) / z_a[i];
    inv_za[i] = 1.0 / z_a[i];
  }
  ad::Var pred = f_out;
  if (head == HeadMode::additive) pred = tape.mul(f_out, tape.constant(std::move(inv_za)));
  return tape.mean_abs(tape.sub(tape.constant(std::move(target)), pred), mask);
}

ad::Var loss_direct_depth(ad::Tape& tape, const ScalarField& z_gt, const ScalarField& z_a,
                          ad::Var f_out, const std::vector<std::uint8_t>& mask) {
  check_loss_shapes(tape, z_gt, z_a, f_out, mask);
  warn_if_empty(mask);
  ad::Tensor diff = field_tensor(tape.value(f_out));
  ad::Tensor za = field_tensor(tape.value(f_out));
  for (std::size_t i = 0; i < z_a.size(); ++i) {
    if (!mask[i]) continue;
    diff[i] = z_gt[i] - z_a[i];
    za[i] = z_a[i];
  }
  const ad::Var scaled = tape.mul(f_out, tape.constant(std::move(za)));
  return tape.mean_abs(tape.sub(tape.constant(std::move(diff)), scaled), mask);
}

std::vector<std::uint8_t> supervision_mask(const ScalarField& z_gt, const ScalarField& d_gt,
                                           const ScalarField& z_a, double d_max, double z_cap) {
  if (!z_gt.same_shape(d_gt) || !z_gt.same_shape(z_a)) {
    throw std::invalid_argument("mask: z_gt, d_gt and estimate must have the same shape");
  }
  std::vector<std::uint8_t> mask(z_gt.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = (z_gt.valid(i) && d_gt.valid(i) && z_a.valid(i) && z_gt[i] <= z_cap && d_gt[i] <= d_max)
                  ? 1
                  : 0;
  }
  return mask;
}

}  // namespace depthref
