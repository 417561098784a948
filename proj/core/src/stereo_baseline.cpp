#include "depthref/stereo_baseline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "depthref/parallel.hpp"

namespace depthref {

void MatchParams::validate() const {
  if (d_max < 1) throw std::invalid_argument("match params: d_max must be at least 1");
  const auto odd_at_least_3 = [](int w) { return w >= 3 && w % 2 == 1; };
  if (!odd_at_least_3(census_window) || census_window > 7) {
    throw std::invalid_argument("match params: census window must be odd, in [3, 7]");
  }
  if (!odd_at_least_3(agg_window)) {
    throw std::invalid_argument("match params: aggregation window must be odd and >= 3");
  }
  if (!(lr_threshold >= 0.0)) throw std::invalid_argument("match params: lr_threshold must be >= 0");
}

CensusCodes census_transform(const Image& img, int window) {
  if (window < 3 || window % 2 == 0 || window > 7) {
    throw std::invalid_argument("census_transform: window must be odd, in [3, 7]");
  }
  const Image gray = img.to_gray();
  const auto w = static_cast<long>(gray.width());
  const auto h = static_cast<long>(gray.height());
  const int r = window / 2;

  CensusCodes out;
  out.width = gray.width();
  out.height = gray.height();
  out.bits = window * window - 1;
  out.codes.assign(out.width * out.height, 0);

  parallel_for(out.height, [&](std::size_t yy) {
    const auto y = static_cast<long>(yy);
    for (long x = 0; x < w; ++x) {
      const double centre = gray.at(static_cast<std::size_t>(x), yy);
      std::uint64_t code = 0;
      int bit = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const long ny = std::clamp(y + dy, 0L, h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const long nx = std::clamp(x + dx, 0L, w - 1);
          if (gray.at(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny)) < centre) {
            code |= std::uint64_t{1} << bit;
          }
          ++bit;
        }
      }
      out.codes[yy * out.width + static_cast<std::size_t>(x)] = code;
    }
  });
  return out;
}

namespace {

// Aggregated matching cost indexed [d][y][x] for the left view.
struct CostVolume {
  std::size_t width = 0;
  std::size_t height = 0;
  int d_count = 0;
  std::vector<std::uint32_t> cost;

  std::uint32_t at(int d, std::size_t x, std::size_t y) const {
    return cost[(static_cast<std::size_t>(d) * height + y) * width + x];
  }
};

void box_filter_clamped(std::vector<std::uint32_t>& slice, std::size_t w, std::size_t h, int window) {
  const long r = window / 2;
  std::vector<std::uint32_t> tmp(slice.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t s = 0;
      for (long k = -r; k <= r; ++k) {
        const long nx = std::clamp(static_cast<long>(x) + k, 0L, static_cast<long>(w) - 1);
        s += slice[y * w + static_cast<std::size_t>(nx)];
      }
      tmp[y * w + x] = s;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t s = 0;
      for (long k = -r; k <= r; ++k) {
        const long ny = std::clamp(static_cast<long>(y) + k, 0L, static_cast<long>(h) - 1);
        s += tmp[static_cast<std::size_t>(ny) * w + x];
      }
      slice[y * w + x] = s;
    }
  }
}

CostVolume build_cost_volume(const CensusCodes& left, const CensusCodes& right, const MatchParams& p) {
  CostVolume vol;
  vol.width = left.width;
  vol.height = left.height;
  vol.d_count = p.d_max + 1;
  const std::size_t plane = vol.width * vol.height;
  vol.cost.assign(plane * static_cast<std::size_t>(vol.d_count), 0);
  const auto penalty = static_cast<std::uint32_t>(left.bits);

  parallel_for(static_cast<std::size_t>(vol.d_count), [&](std::size_t d) {
    std::vector<std::uint32_t> slice(plane);
    for (std::size_t y = 0; y < vol.height; ++y) {
      for (std::size_t x = 0; x < vol.width; ++x) {
        slice[y * vol.width + x] =
            x >= d ? static_cast<std::uint32_t>(std::popcount(left.at(x, y) ^ right.at(x - d, y)))
                   : penalty;
      }
    }
    box_filter_clamped(slice, vol.width, vol.height, p.agg_window);
    std::copy(slice.begin(), slice.end(), vol.cost.begin() + static_cast<std::ptrdiff_t>(d * plane));
  });
  return vol;
}

// Parabola through (-1, cm), (0, c0), (1, cp); vertex offset clamped to [-0.5, 0.5].
double parabolic_offset(double cm, double c0, double cp) {
  const double denom = cm - 2.0 * c0 + cp;
  if (!(denom > 0.0)) return 0.0;
  return std::clamp((cm - cp) / (2.0 * denom), -0.5, 0.5);
}

// Winner-take-all over candidates where cost(d) is defined; ties keep the smaller d.
template <typename CostFn, typename DefinedFn>
double select_disparity(int d_count, CostFn cost, DefinedFn defined) {
  int best = -1;
  std::uint32_t best_cost = std::numeric_limits<std::uint32_t>::max();
  for (int d = 0; d < d_count; ++d) {
    if (!defined(d)) continue;
    const std::uint32_t c = cost(d);
    if (c < best_cost) {
      best_cost = c;
      best = d;
    }
  }
  if (best < 0) return -1.0;
  double refined = best;
  if (best > 0 && best < d_count - 1 && defined(best - 1) && defined(best + 1)) {
    refined += parabolic_offset(cost(best - 1), best_cost, cost(best + 1));
  }
  return refined;
}

}  // namespace

ScalarField compute_disparity(const Image& left, const Image& right, const MatchParams& params) {
  params.validate();
  if (left.width() != right.width() || left.height() != right.height()) {
    throw std::invalid_argument("compute_disparity: left and right images differ in size");
  }
  const CensusCodes cl = census_transform(left, params.census_window);
  const CensusCodes cr = census_transform(right, params.census_window);
  const CostVolume vol = build_cost_volume(cl, cr, params);
  const std::size_t w = vol.width;
  const std::size_t h = vol.height;

  std::vector<double> disp_left(w * h);
  std::vector<double> disp_right(w * h);
  parallel_for(h, [&](std::size_t y) {
    for (std::size_t x = 0; x < w; ++x) {
      disp_left[y * w + x] = select_disparity(
          vol.d_count, [&](int d) { return vol.at(d, x, y); }, [](int) { return true; });
      // Right-view cost at xr for disparity d is the left cost at xr + d.
      disp_right[y * w + x] = select_disparity(
          vol.d_count, [&](int d) { return vol.at(d, x + static_cast<std::size_t>(d), y); },
          [&](int d) { return x + static_cast<std::size_t>(d) < w; });
    }
  });

  ScalarField out(w, h, FieldRole::disparity);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dl = disp_left[y * w + x];
      const long xr = static_cast<long>(x) - std::lround(dl);
      if (xr < 0) continue;
      const double dr = disp_right[y * w + static_cast<std::size_t>(xr)];
      if (dr >= 0.0 && std::abs(dl - dr) <= params.lr_threshold) out.set(x, y, dl);
    }
  }
  return out;
}

ScalarField fill_invalid(const ScalarField& field) {
  ScalarField out = field;
  const std::size_t w = field.width();
  for (std::size_t y = 0; y < field.height(); ++y) {
    const std::size_t row = y * w;
    // Nearest valid value on the left, carried forward; 0 marks "none yet".
    std::vector<double> from_left(w);
    std::vector<std::uint8_t> has_left(w, 0);
    bool seen = false;
    double last = 0.0;
    for (std::size_t x = 0; x < w; ++x) {
      if (field.valid(row + x)) {
        seen = true;
        last = field[row + x];
      }
      from_left[x] = last;
      has_left[x] = seen ? 1 : 0;
    }
    seen = false;
    last = 0.0;
    for (std::size_t k = w; k-- > 0;) {
      if (field.valid(row + k)) {
        seen = true;
        last = field[row + k];
        continue;
      }
      const double fill = has_left[k] ? from_left[k] : (seen ? last : 0.0);
      out.set_value_only(row + k, fill);
    }
  }
  return out;
}

}  // namespace depthref
