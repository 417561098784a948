#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace depthref {

/// Rectified stereo rig: horizontal baseline and horizontal focal length.
struct CameraRig {
  double baseline_m = 0.54;
  double focal_x_px = 480.0;

  /// b * f_x, the numerator of the triangulation relation.
  double bf() const { return baseline_m * focal_x_px; }

  /// Throws std::invalid_argument unless both constants are positive and finite.
  void validate() const;
};

enum class FieldRole : std::uint8_t { generic, disparity, depth };

const char* to_string(FieldRole role);

/// Row-major grid of doubles with a per-pixel validity flag.
///
/// Valid pixels always hold finite values. Producers store quiet NaN at invalid
/// pixels unless stated otherwise (fill_invalid deliberately keeps filled
/// values behind an unchanged mask).
class ScalarField {
 public:
  static constexpr double kInvalidValue = std::numeric_limits<double>::quiet_NaN();

  ScalarField() = default;
  /// All pixels invalid, value NaN.
  ScalarField(std::size_t width, std::size_t height, FieldRole role = FieldRole::generic);
  /// All pixels set to value and marked valid.
  ScalarField(std::size_t width, std::size_t height, double value, FieldRole role);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  FieldRole role() const { return role_; }
  void set_role(FieldRole role) { role_ = role; }

  double value(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
  bool valid(std::size_t x, std::size_t y) const { return valid_[y * width_ + x] != 0; }
  double operator[](std::size_t i) const { return values_[i]; }
  bool valid(std::size_t i) const { return valid_[i] != 0; }

  void set(std::size_t x, std::size_t y, double v) { set(y * width_ + x, v); }
  /// Stores v; the pixel becomes valid iff v is finite.
  void set(std::size_t i, double v);
  void invalidate(std::size_t i);
  /// Raw write that leaves the mask untouched.
  void set_value_only(std::size_t i, double v) { values_[i] = v; }
  void set_valid_only(std::size_t i, bool v) { valid_[i] = v ? 1 : 0; }

  std::span<const double> values() const { return values_; }
  std::span<const std::uint8_t> mask() const { return valid_; }
  std::size_t valid_count() const;

  bool same_shape(const ScalarField& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  /// Horizontal mirror (x -> width-1-x) of values and mask.
  ScalarField flipped_horizontally() const;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  FieldRole role_ = FieldRole::generic;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
};

/// Z = b f_x / d. Pixels that are invalid or have d <= 0 come out invalid.
ScalarField disparity_to_depth(const ScalarField& disparity, const CameraRig& rig);

/// d = b f_x / Z. Pixels that are invalid or have Z <= 0 come out invalid.
ScalarField depth_to_disparity(const ScalarField& depth, const CameraRig& rig);

/// First-order depth error b f_x eps_d / d_gt^2 for a disparity error eps_d.
/// Throws std::invalid_argument if d_gt <= 0.
double predicted_depth_error(double d_gt, double eps_d, const CameraRig& rig);

/// Exact depth error b f_x eps_d / (d_gt (d_gt + eps_d)).
/// Throws std::invalid_argument if d_gt <= 0 or d_gt + eps_d <= 0.
double exact_depth_error(double d_gt, double eps_d, const CameraRig& rig);

}  // namespace depthref
