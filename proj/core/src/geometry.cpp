#include "depthref/geometry.hpp"

#include <cmath>
#include <algorithm>
#include <stdexcept>
#include <string>

namespace depthref {

void CameraRig::validate() const {
  if (!(std::isfinite(baseline_m) && baseline_m > 0.0)) {
    throw std::invalid_argument("camera rig: baseline_m must be positive, got " +
                                std::to_string(baseline_m));
  }
  if (!(std::isfinite(focal_x_px) && focal_x_px > 0.0)) {
    throw std::invalid_argument("camera rig: focal_x_px must be positive, got " +
                                std::to_string(focal_x_px));
  }
}

const char* to_string(FieldRole role) {
  switch (role) {
    case FieldRole::generic:
      return "generic";
    case FieldRole::disparity:
      return "disparity";
    case FieldRole::depth:
      return "depth";
  }
  return "unknown";
}

ScalarField::ScalarField(std::size_t width, std::size_t height, FieldRole role)
    : width_(width),
      height_(height),
      role_(role),
      values_(width * height, kInvalidValue),
      valid_(width * height, 0) {}

ScalarField::ScalarField(std::size_t width, std::size_t height, double value, FieldRole role)
    : width_(width), height_(height), role_(role), values_(width * height, value),
      valid_(width * height, 1) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("ScalarField: fill value must be finite");
  }
}

void ScalarField::set(std::size_t i, double v) {
  values_[i] = v;
  valid_[i] = std::isfinite(v) ? 1 : 0;
}

void ScalarField::invalidate(std::size_t i) {
  values_[i] = kInvalidValue;
  valid_[i] = 0;
}

std::size_t ScalarField::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

ScalarField ScalarField::flipped_horizontally() const {
  ScalarField out = *this;
  for (std::size_t y = 0; y < height_; ++y) {
    for (std::size_t x = 0; x < width_; ++x) {
      const std::size_t src = y * width_ + (width_ - 1 - x);
      out.values_[y * width_ + x] = values_[src];
      out.valid_[y * width_ + x] = valid_[src];
    }
  }
  return out;
}

namespace {

// Shared body of the two reciprocal conversions: out = bf / in where valid and in > 0.
ScalarField reciprocal_map(const ScalarField& in, const CameraRig& rig, FieldRole out_role) {
  rig.validate();
  const double bf = rig.bf();
  ScalarField out(in.width(), in.height(), out_role);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    if (in.valid(i) && v > 0.0) {
      out.set(i, bf / v);
    }
  }
  return out;
}

}  // namespace

ScalarField disparity_to_depth(const ScalarField& disparity, const CameraRig& rig) {
  if (disparity.role() == FieldRole::depth) {
    throw std::invalid_argument("disparity_to_depth: input is a depth field");
  }
  return reciprocal_map(disparity, rig, FieldRole::depth);
}

ScalarField depth_to_disparity(const ScalarField& depth, const CameraRig& rig) {
  if (depth.role() == FieldRole::disparity) {
    throw std::invalid_argument("depth_to_disparity: input is a disparity field");
  }
  return reciprocal_map(depth, rig, FieldRole::disparity);
}

double predicted_depth_error(double d_gt, double eps_d, const CameraRig& rig) {
  rig.validate();
  if (!(d_gt > 0.0)) {
    throw std::invalid_argument("predicted_depth_error: d_gt must be positive");
  }
  return rig.bf() * eps_d / (d_gt * d_gt);
}

double exact_depth_error(double d_gt, double eps_d, const CameraRig& rig) {
  rig.validate();
  if (!(d_gt > 0.0) || !(d_gt + eps_d > 0.0)) {
    throw std::invalid_argument(
        "exact_depth_error: d_gt and d_gt + eps_d must both be positive");
  }
  return rig.bf() * eps_d / (d_gt * (d_gt + eps_d));
}

}  // namespace depthref
