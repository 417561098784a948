#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "depthref/geometry.hpp"
#include "depthref/imaging.hpp"

namespace depthref {

struct MatchParams {
  int d_max = 128;
  int census_window = 5;
  int agg_window = 7;
  double lr_threshold = 1.0;

  /// d_max >= 1; windows odd and >= 3; census_window <= 7 (48 bits);
  /// lr_threshold >= 0. Throws std::invalid_argument otherwise.
  void validate() const;
};

/// Per-pixel census codes, row-major.
struct CensusCodes {
  std::size_t width = 0;
  std::size_t height = 0;
  int bits = 0;
  std::vector<std::uint64_t> codes;

  std::uint64_t at(std::size_t x, std::size_t y) const { return codes[y * width + x]; }
};

/// Census transform of the grayscale image (channel mean). Bit k is set when
/// the k-th window neighbour (row-major over the window, centre skipped) is
/// strictly darker than the centre. Coordinates clamp at the border.
CensusCodes census_transform(const Image& img, int window);

/// Census/Hamming block matching with box aggregation, winner-take-all
/// (ties to the smaller disparity), parabolic subpixel refinement clamped to
/// half a pixel and a left-right consistency check. Throws on size mismatch.
ScalarField compute_disparity(const Image& left, const Image& right, const MatchParams& params);

/// Fills invalid pixels from the nearest valid pixel to the left, else to the
/// right, in the same row. Rows without valid pixels are filled with 0.
/// The validity mask is returned unchanged.
ScalarField fill_invalid(const ScalarField& field);

}  // namespace depthref
