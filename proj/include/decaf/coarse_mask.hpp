#pragma once

// Coarse masks straight from a grounding map: Otsu threshold, then
// nearest-neighbour upscaling to pixel resolution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "decaf/error.hpp"
#include "decaf/grounding_map.hpp"
#include "decaf/tensor.hpp"

namespace decaf {

inline constexpr std::size_t kDefaultOtsuBins = 256;

/// Histogram bin of a value in [0, 1]; out-of-range values are clamped.
inline std::size_t otsu_bin(double v, std::size_t bins) {
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * static_cast<double>(bins));
  return std::min(static_cast<std::size_t>(scaled), bins - 1);
}

/// Between-class variance (scaled by total count squared) of a split with
/// class sizes n0/n1 and bin-index sums s0/s1.
inline double otsu_between_class(double n0, double n1, double s0, double s1) {
  const double d = s0 / n0 - s1 / n1;
  return n0 * n1 * d * d;
}

/// Threshold k/bins (k in 1..bins-1) maximizing between-class variance of a
/// `bins`-bin histogram on [0, 1]. Class 1 is every value >= the threshold.
/// Ties resolve to the lowest threshold.
inline double otsu_threshold(std::span<const double> values, std::size_t bins = kDefaultOtsuBins) {
  if (bins < 2) throw ValidationError("Otsu needs at least two bins");
  std::vector<double> hist(bins, 0.0);
  for (double v : values) hist[otsu_bin(v, bins)] += 1.0;

  double total_n = 0.0, total_s = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    total_n += hist[b];
    total_s += hist[b] * static_cast<double>(b);
  }

  double n0 = 0.0, s0 = 0.0;
  double best = -1.0;
  std::size_t best_k = 0;
  for (std::size_t k = 1; k < bins; ++k) {
    n0 += hist[k - 1];
    s0 += hist[k - 1] * static_cast<double>(k - 1);
    const double n1 = total_n - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double sigma = otsu_between_class(n0, n1, s0, total_s - s0);
    if (sigma > best) {
      best = sigma;
      best_k = k;
    }
  }
  if (best_k == 0) throw DegenerateHistogram();
  return static_cast<double>(best_k) / static_cast<double>(bins);
}

enum class OtsuScope { global, per_frame };

/// Cell is set iff its value reaches the Otsu threshold. A degenerate
/// histogram (within the threshold's scope) yields empty masks.
inline BinaryVolume attn_mask(const GroundingMap& v, OtsuScope scope = OtsuScope::global,
                              std::size_t bins = kDefaultOtsuBins) {
  BinaryVolume out(v.frames(), v.height(), v.width(), 0);
  auto apply = [&](std::span<const double> src, std::span<std::uint8_t> dst) {
    double thr = 0.0;
    try {
      thr = otsu_threshold(src, bins);
    } catch (const DegenerateHistogram&) {
      return;
    }
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= thr ? 1 : 0;
  };
  if (scope == OtsuScope::global) {
    apply(v.values.data(), out.data());
  } else {
    for (std::size_t t = 0; t < v.frames(); ++t) apply(v.values.frame(t), out.frame(t));
  }
  return out;
}

/// Nearest-neighbour block replication of a cell mask to (H, W) pixels.
/// The target must agree with grid x cell scale to within one cell.
inline BinaryVolume mask_upscale(const BinaryVolume& mask, double scale_y, double scale_x,
                                 std::size_t target_h, std::size_t target_w) {
  const std::size_t gh = mask.height(), gw = mask.width();
  if (target_h < gh || target_w < gw) throw ValidationError("mask_upscale target smaller than grid");
  if (std::abs(static_cast<double>(target_h) - static_cast<double>(gh) * scale_y) >= scale_y ||
      std::abs(static_cast<double>(target_w) - static_cast<double>(gw) * scale_x) >= scale_x)
    throw ValidationError("target size inconsistent with grid and cell scale");

  BinaryVolume out(mask.frames(), target_h, target_w, 0);
  std::vector<std::size_t> row_cell(target_h), col_cell(target_w);
  for (std::size_t y = 0; y < target_h; ++y)
    row_cell[y] = std::min(gh - 1, static_cast<std::size_t>((y + 0.5) * gh / target_h));
  for (std::size_t x = 0; x < target_w; ++x)
    col_cell[x] = std::min(gw - 1, static_cast<std::size_t>((x + 0.5) * gw / target_w));
  for (std::size_t t = 0; t < mask.frames(); ++t)
    for (std::size_t y = 0; y < target_h; ++y)
      for (std::size_t x = 0; x < target_w; ++x)
        out(t, y, x) = mask(t, row_cell[y], col_cell[x]);
  return out;
}

}  // namespace decaf
