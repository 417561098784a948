#include "depthref/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace depthref {

namespace {

void check_dims(std::size_t width, std::size_t height, std::size_t channels) {
  if (width == 0 || height == 0) {
    throw std::invalid_argument("Image: dimensions must be positive");
  }
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("Image: channels must be 1 or 3");
  }
}

}  // namespace

Image::Image(std::size_t width, std::size_t height, std::size_t channels)
    : width_(width), height_(height), channels_(channels) {
  check_dims(width, height, channels);
  values_.assign(width * height * channels, 0.0);
}

Image::Image(std::size_t width, std::size_t height, std::size_t channels,
             std::vector<double> values)
    : width_(width), height_(height), channels_(channels), values_(std::move(values)) {
  check_dims(width, height, channels);
  if (values_.size() != width * height * channels) {
    throw std::invalid_argument("Image: value count does not match dimensions");
  }
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw std::invalid_argument("Image: values must be finite and within [0, 1]");
    }
  }
}

void Image::set(std::size_t x, std::size_t y, std::size_t c, double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("Image::set: non-finite value");
  values_[(y * width_ + x) * channels_ + c] = std::clamp(v, 0.0, 1.0);
}

Image Image::to_gray() const {
  if (channels_ == 1) return *this;
  Image out(width_, height_, 1);
  for (std::size_t i = 0; i < width_ * height_; ++i) {
    const double* p = &values_[i * 3];
    out.values_[i] = (p[0] + p[1] + p[2]) / 3.0;
  }
  return out;
}

Image Image::flipped_horizontally() const {
  Image out = *this;
  for (std::size_t y = 0; y < height_; ++y) {
    for (std::size_t x = 0; x < width_; ++x) {
      for (std::size_t c = 0; c < channels_; ++c) {
        out.values_[(y * width_ + x) * channels_ + c] =
            values_[(y * width_ + (width_ - 1 - x)) * channels_ + c];
      }
    }
  }
  return out;
}

std::optional<double> bilinear_sample(const Image& img, double x, double y, std::size_t c) {
  const double max_x = static_cast<double>(img.width() - 1);
  const double max_y = static_cast<double>(img.height() - 1);
  if (!(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y)) return std::nullopt;

  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  // Neighbours with zero weight are never read, so x0 == W-1 with fx == 0 is fine.
  const std::size_t x1 = fx > 0.0 ? x0 + 1 : x0;
  const std::size_t y1 = fy > 0.0 ? y0 + 1 : y0;

  const double top = (1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
  const double bottom = (1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
  return (1.0 - fy) * top + fy * bottom;
}

WarpedImage warp_right_to_left(const Image& right, const ScalarField& disparity) {
  if (right.width() != disparity.width() || right.height() != disparity.height()) {
    throw std::invalid_argument("warp_right_to_left: image and disparity dimensions differ");
  }
  WarpedImage out{Image(right.width(), right.height(), right.channels()),
                  std::vector<std::uint8_t>(right.width() * right.height(), 0)};
  for (std::size_t y = 0; y < right.height(); ++y) {
    for (std::size_t x = 0; x < right.width(); ++x) {
      const std::size_t i = y * right.width() + x;
      if (!disparity.valid(i)) continue;
      const double sx = static_cast<double>(x) - disparity[i];
      bool ok = true;
      for (std::size_t c = 0; c < right.channels() && ok; ++c) {
        const auto v = bilinear_sample(right, sx, static_cast<double>(y), c);
        if (v) {
          out.image.set(x, y, c, *v);
        } else {
          ok = false;
        }
      }
      if (ok) {
        out.valid[i] = 1;
      } else {
        for (std::size_t c = 0; c < right.channels(); ++c) out.image.set(x, y, c, 0.0);
      }
    }
  }
  return out;
}

namespace {

// One-sided or central difference along an axis, skipping invalid neighbours.
double axis_derivative(const ScalarField& z, std::size_t x, std::size_t y, bool along_x) {
  const std::size_t n = along_x ? z.width() : z.height();
  const std::size_t pos = along_x ? x : y;
  auto probe = [&](std::size_t p) -> std::optional<double> {
    const std::size_t px = along_x ? p : x;
    const std::size_t py = along_x ? y : p;
    if (!z.valid(px, py)) return std::nullopt;
    return z.value(px, py);
  };
  const double here = z.value(x, y);
  const auto prev = pos > 0 ? probe(pos - 1) : std::nullopt;
  const auto next = pos + 1 < n ? probe(pos + 1) : std::nullopt;
  if (prev && next) return 0.5 * (*next - *prev);
  if (next) return *next - here;
  if (prev) return here - *prev;
  return 0.0;
}

}  // namespace

ScalarField shading_response(const ScalarField& depth, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("shading_image: eps must be positive");
  ScalarField out(depth.width(), depth.height(), FieldRole::generic);
  for (std::size_t y = 0; y < depth.height(); ++y) {
    for (std::size_t x = 0; x < depth.width(); ++x) {
      if (!depth.valid(x, y)) continue;
      const double gx = axis_derivative(depth, x, y, true);
      const double gy = axis_derivative(depth, x, y, false);
      out.set(x, y, 1.0 / (std::hypot(gx, gy) + eps));
    }
  }
  return out;
}

Image shading_image(const ScalarField& depth, double eps) {
  const ScalarField response = shading_response(depth, eps);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (!response.valid(i)) continue;
    lo = std::min(lo, response[i]);
    hi = std::max(hi, response[i]);
  }
  Image out(depth.width(), depth.height(), 1);
  for (std::size_t y = 0; y < depth.height(); ++y) {
    for (std::size_t x = 0; x < depth.width(); ++x) {
      if (!response.valid(x, y)) continue;
      const double v = hi > lo ? (response.value(x, y) - lo) / (hi - lo) : 1.0;
      out.set(x, y, 0, v);
    }
  }
  return out;
}

}  // namespace depthref
