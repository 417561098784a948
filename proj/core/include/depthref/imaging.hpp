#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "depthref/geometry.hpp"

namespace depthref {

/// Row-major, channel-interleaved image with values in [0, 1].
class Image {
 public:
  Image() = default;
  /// Zero-filled image. channels must be 1 or 3; dimensions positive.
  Image(std::size_t width, std::size_t height, std::size_t channels);
  /// Validates that every value is finite and in [0, 1].
  Image(std::size_t width, std::size_t height, std::size_t channels, std::vector<double> values);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t channels() const { return channels_; }
  bool empty() const { return values_.empty(); }

  double at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return values_[(y * width_ + x) * channels_ + c];
  }
  /// Values outside [0, 1] are clamped; non-finite values throw.
  void set(std::size_t x, std::size_t y, std::size_t c, double v);

  std::span<const double> values() const { return values_; }

  Image to_gray() const;
  Image flipped_horizontally() const;

  bool operator==(const Image&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

/// Right image resampled into the left image plane.
struct WarpedImage {
  Image image;
  std::vector<std::uint8_t> valid;  // width*height, 0 where the sample left the right image
};

/// Bilinear interpolation of channel c at (x, y). Returns nullopt when any
/// neighbour with nonzero weight lies outside [0, W-1] x [0, H-1].
std::optional<double> bilinear_sample(const Image& img, double x, double y, std::size_t c = 0);

/// out(x, y) = right(x - d(x, y), y). Invalid disparities and out-of-bounds
/// samples give 0 with valid = false. Throws on dimension mismatch.
WarpedImage warp_right_to_left(const Image& right, const ScalarField& disparity);

/// Visualisation 1 / (|grad Z| + eps), min-max rescaled to [0, 1] over valid
/// pixels; invalid pixels are 0. A constant response maps to 1.
/// Throws std::invalid_argument if eps <= 0.
Image shading_image(const ScalarField& depth, double eps);

/// The unscaled response 1 / (|grad Z| + eps); invalid pixels are invalid.
ScalarField shading_response(const ScalarField& depth, double eps);

}  // namespace depthref
