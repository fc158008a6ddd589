#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tierseg/boundaries.hpp"
#include "tierseg/echogram.hpp"
#include "tierseg/errors.hpp"

namespace tierseg {

/// Keys cubic convolution kernel; a = -0.5 gives Catmull-Rom.
inline double cubic_kernel(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace detail {

struct CubicTaps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

// Align-corners mapping: output sample j sits at source coordinate
// j * (in - 1) / (out - 1); taps clamp to the edge.
inline std::vector<CubicTaps> cubic_taps(std::size_t in, std::size_t out) {
  std::vector<CubicTaps> taps(out);
  const double ratio = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (std::size_t j = 0; j < out; ++j) {
    const double src = static_cast<double>(j) * ratio;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int t = 0; t < 4; ++t) {
      const double pos = base + static_cast<double>(t - 1);
      const double clamped = std::clamp(pos, 0.0, static_cast<double>(in - 1));
      taps[j].index[static_cast<std::size_t>(t)] = static_cast<std::size_t>(clamped);
      taps[j].weight[static_cast<std::size_t>(t)] = cubic_kernel(frac - static_cast<double>(t - 1));
    }
  }
  return taps;
}

}  // namespace detail

/// Separable bicubic (Catmull-Rom) resize with clamp-to-edge sampling.
inline Echogram resize_bicubic(const Echogram& image, std::size_t out_height, std::size_t out_width) {
  if (out_height < 4 || out_width < 4)
    throw dimension_error("resize_bicubic: output " + std::to_string(out_height) + "x" + std::to_string(out_width) +
                          " below the 4x4 minimum");
  if (image.height == 0 || image.width == 0) throw dimension_error("resize_bicubic: empty input");
  const auto col_taps = detail::cubic_taps(image.width, out_width);
  const auto row_taps = detail::cubic_taps(image.height, out_height);

  std::vector<double> horizontal(image.height * out_width);
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < out_width; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < 4; ++t) s += col_taps[c].weight[t] * image.at(r, col_taps[c].index[t]);
      horizontal[r * out_width + c] = s;
    }

  Echogram out = image;
  out.height = out_height;
  out.width = out_width;
  out.pixels.assign(out_height * out_width, 0.0);
  for (std::size_t r = 0; r < out_height; ++r)
    for (std::size_t c = 0; c < out_width; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < 4; ++t) s += row_taps[r].weight[t] * horizontal[row_taps[r].index[t] * out_width + c];
      out.pixels[r * out_width + c] = s;
    }
  return out;
}

/// Rescales ground-truth rows consistently with resize_bicubic's grid.
inline BoundaryMatrix resize_boundaries(const BoundaryMatrix& m, std::size_t height, std::size_t out_height) {
  if (height < 2 || out_height < 2) throw dimension_error("resize_boundaries: heights must be >= 2");
  const double s = static_cast<double>(out_height - 1) / static_cast<double>(height - 1);
  BoundaryMatrix out = m;
  for (auto& row : out.rows)
    for (double& v : row) v *= s;
  return out;
}

/// Resamples columns at the same align-corners positions as the image.
inline BoundaryMatrix resize_boundary_columns(const BoundaryMatrix& m, std::size_t out_width) {
  if (m.width == out_width) return m;
  if (m.width < 2 || out_width < 2) throw dimension_error("resize_boundary_columns: widths must be >= 2");
  BoundaryMatrix out{out_width, {}};
  const double ratio = static_cast<double>(m.width - 1) / static_cast<double>(out_width - 1);
  for (const auto& row : m.rows) {
    std::vector<double> r(out_width);
    for (std::size_t j = 0; j < out_width; ++j) {
      const double src = static_cast<double>(j) * ratio;
      const std::size_t i0 = std::min(static_cast<std::size_t>(src), m.width - 2);
      const double f = src - static_cast<double>(i0);
      r[j] = (1.0 - f) * row[i0] + f * row[i0 + 1];
    }
    out.rows.push_back(std::move(r));
  }
  return out;
}

/// Pixel statistics of a training split.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Population mean and standard deviation over every pixel of `images`.
inline NormStats fit_stats(std::span<const Echogram> images) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& img : images) {
    for (double v : img.pixels) sum += v;
    n += img.pixels.size();
  }
  if (n == 0) throw config_error("fit_stats: no pixels in training set");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& img : images)
    for (double v : img.pixels) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0)) throw config_error("fit_stats: training pixels have zero standard deviation");
  return {mean, sd};
}

/// (x - mean) / std per pixel.
inline Echogram normalize_intensity(const Echogram& image, const NormStats& stats) {
  if (!(stats.std > 0.0)) throw config_error("normalize_intensity: std must be positive");
  Echogram out = image;
  for (double& v : out.pixels) v = (v - stats.mean) / stats.std;
  return out;
}

/// Zero-based pixel row r in [0, H-1] to [-1, 1].
inline double normalize_row(double r, std::size_t height) {
  if (height < 2) throw dimension_error("normalize_row: height must be >= 2");
  return 2.0 * r / static_cast<double>(height - 1) - 1.0;
}

inline double denormalize_row(double y, std::size_t height) {
  if (height < 2) throw dimension_error("denormalize_row: height must be >= 2");
  return (y + 1.0) * static_cast<double>(height - 1) / 2.0;
}

/// Thickness in pixels to normalized units (same 2/(H-1) scale as rows).
inline double normalize_gap(double g, std::size_t height) { return 2.0 * g / static_cast<double>(height - 1); }
inline double denormalize_gap(double g, std::size_t height) { return g * static_cast<double>(height - 1) / 2.0; }

inline std::vector<double> normalize_rows(std::span<const double> rows, std::size_t height) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = normalize_row(rows[i], height);
  return out;
}

inline std::vector<double> denormalize_rows(std::span<const double> rows, std::size_t height) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = denormalize_row(rows[i], height);
  return out;
}

/// Resize (if needed) then rescale labels, matching the model's input grid.
inline void fit_to_grid(Echogram& image, BoundaryMatrix& gt, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return;
  const std::size_t h0 = image.height;
  image = resize_bicubic(image, height, width);
  gt = resize_boundary_columns(resize_boundaries(gt, h0, height), width);
}

}  // namespace tierseg
