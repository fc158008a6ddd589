#pragma once

// Parametric layered-echogram simulator. Boundaries never cross, run
// roughly parallel to the surface, and share a common per-image thickness
// scale; rendering paints each boundary as a bright band with depth
// attenuation and speckle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tierseg/boundaries.hpp"
#include "tierseg/echogram.hpp"
#include "tierseg/errors.hpp"
#include "tierseg/io.hpp"
#include "tierseg/rng.hpp"

namespace tierseg {

inline constexpr std::size_t kMaxLayers = 30;

struct SimConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_layers = 1;
  std::size_t max_layers = 8;
  /// Row range of the surface curve's mean level.
  double surface_min = 5.0;
  double surface_max = 12.0;
  /// Peak amplitude (px) of the surface's low-frequency undulation.
  double surface_amplitude = 2.0;
  /// Shortest undulation period as a multiple of the image width.
  double surface_period = 0.75;
  /// Maximum absolute rise (px) of the surface's linear trend across the width.
  double surface_trend = 3.0;
  /// Range of the per-image base layer thickness (px).
  double thickness_min = 3.5;
  double thickness_max = 5.5;
  /// Relative column-wise thickness modulation.
  double thickness_jitter = 0.15;
  /// Relative per-layer deviation from the base thickness.
  double layer_variation = 0.25;
  double brightness = 0.8;
  /// Internal boundaries are dimmer than the surface by this factor.
  double internal_ratio = 0.65;
  /// Relative per-boundary brightness variation.
  double brightness_jitter = 0.3;
  /// Diffuse sub-surface scattering relative to `brightness`.
  double volume_scatter = 0.08;
  /// Vertical Gaussian sigma (px) of a boundary band.
  double band_sigma = 0.8;
  double noise = 0.3;
  /// Exponential intensity decay per pixel below the surface.
  double attenuation = 0.015;
  std::uint64_t seed = 1;

  /// Lowest surface row any sample can reach.
  double surface_floor() const { return surface_min - surface_amplitude - surface_trend / 2.0; }

  void validate() const {
    if (height < 2 || width < 2) throw config_error("sim: image must be at least 2x2");
    if (min_layers > max_layers) throw config_error("sim: empty layer-count range");
    if (max_layers > kMaxLayers) throw config_error("sim: max_layers exceeds 30");
    if (surface_min > surface_max) throw config_error("sim: empty surface range");
    if (thickness_min <= 0.0 || thickness_min > thickness_max) throw config_error("sim: bad thickness range");
    if (thickness_jitter < 0.0 || thickness_jitter >= 1.0) throw config_error("sim: thickness_jitter must be in [0,1)");
    if (layer_variation < 0.0 || layer_variation >= 1.0) throw config_error("sim: layer_variation must be in [0,1)");
    if (surface_amplitude < 0.0 || surface_trend < 0.0 || surface_period <= 0.0)
      throw config_error("sim: surface shape parameters must be non-negative");
    if (band_sigma <= 0.0 || noise < 0.0 || brightness < 0.0 || attenuation < 0.0)
      throw config_error("sim: rendering parameters out of range");
    if (surface_floor() < 0.0) throw config_error("sim: surface can leave the image top");
    const double top = static_cast<double>(height) - 1.0;
    if (surface_max + surface_amplitude + surface_trend / 2.0 > top)
      throw config_error("sim: surface can leave the image bottom");
    const double min_stack = static_cast<double>(max_layers) * thickness_min * (1.0 - layer_variation) *
                             (1.0 - thickness_jitter);
    if (surface_floor() + min_stack > top)
      throw config_error("sim: minimum total thickness of " + std::to_string(max_layers) +
                         " layers cannot fit in height " + std::to_string(height));
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("height", std::uint64_t{height});
    kv.set("width", std::uint64_t{width});
    kv.set("min_layers", std::uint64_t{min_layers});
    kv.set("max_layers", std::uint64_t{max_layers});
    kv.set("surface_min", surface_min);
    kv.set("surface_max", surface_max);
    kv.set("surface_amplitude", surface_amplitude);
    kv.set("surface_period", surface_period);
    kv.set("surface_trend", surface_trend);
    kv.set("thickness_min", thickness_min);
    kv.set("thickness_max", thickness_max);
    kv.set("thickness_jitter", thickness_jitter);
    kv.set("layer_variation", layer_variation);
    kv.set("brightness", brightness);
    kv.set("internal_ratio", internal_ratio);
    kv.set("brightness_jitter", brightness_jitter);
    kv.set("volume_scatter", volume_scatter);
    kv.set("band_sigma", band_sigma);
    kv.set("noise", noise);
    kv.set("attenuation", attenuation);
    kv.set("seed", seed);
    return kv;
  }

  static SimConfig from_kv(const KeyValues& kv) {
    SimConfig c;
    auto opt_real = [&](const char* key, double& field) {
      if (kv.has(key)) field = kv.real(key);
    };
    auto opt_size = [&](const char* key, std::size_t& field) {
      if (kv.has(key)) field = static_cast<std::size_t>(kv.integer(key));
    };
    opt_size("height", c.height);
    opt_size("width", c.width);
    opt_size("min_layers", c.min_layers);
    opt_size("max_layers", c.max_layers);
    opt_real("surface_min", c.surface_min);
    opt_real("surface_max", c.surface_max);
    opt_real("surface_amplitude", c.surface_amplitude);
    opt_real("surface_period", c.surface_period);
    opt_real("surface_trend", c.surface_trend);
    opt_real("thickness_min", c.thickness_min);
    opt_real("thickness_max", c.thickness_max);
    opt_real("thickness_jitter", c.thickness_jitter);
    opt_real("layer_variation", c.layer_variation);
    opt_real("brightness", c.brightness);
    opt_real("internal_ratio", c.internal_ratio);
    opt_real("brightness_jitter", c.brightness_jitter);
    opt_real("volume_scatter", c.volume_scatter);
    opt_real("band_sigma", c.band_sigma);
    opt_real("noise", c.noise);
    opt_real("attenuation", c.attenuation);
    if (kv.has("seed")) c.seed = kv.integer("seed");
    return c;
  }

  /// Stable identifier derived from every field (FNV-1a of the key-value text).
  std::string id() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_kv().str()) h = (h ^ ch) * 0x100000001b3ULL;
    char buf[17];
    static const char* hex = "0123456789abcdef";
    for (int i = 15; i >= 0; --i, h >>= 4) buf[i] = hex[h & 0xf];
    buf[16] = '\0';
    return buf;
  }
};

namespace detail {

// Smooth zero-mean curve over columns: sum of three sinusoids with random
// phases and periods no shorter than `min_period` columns, scaled so that
// the coefficients sum to `amplitude`.
inline std::vector<double> smooth_curve(std::size_t width, double amplitude, double min_period, Rng& rng) {
  std::vector<double> out(width, 0.0);
  double amps[3], periods[3], phases[3], total = 0.0;
  for (int k = 0; k < 3; ++k) {
    amps[k] = rng.uniform(0.2, 1.0) / static_cast<double>(k + 1);
    periods[k] = min_period * rng.uniform(1.0, 2.0) * static_cast<double>(3 - k);
    phases[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    total += amps[k];
  }
  if (amplitude == 0.0) return out;
  for (std::size_t w = 0; w < width; ++w) {
    double v = 0.0;
    for (int k = 0; k < 3; ++k)
      v += amps[k] * std::sin(2.0 * std::numbers::pi * static_cast<double>(w) / periods[k] + phases[k]);
    out[w] = amplitude * v / total;
  }
  return out;
}

}  // namespace detail

/// Draws a boundary matrix satisfying the non-crossing and in-range
/// invariants by construction. Thickness draws that overflow the image are
/// rejected and redrawn rather than clamped.
inline BoundaryMatrix sample_boundaries(const SimConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  const std::size_t layers = static_cast<std::size_t>(
      rng.between(static_cast<int>(c.min_layers), static_cast<int>(c.max_layers)));
  const double min_period = c.surface_period * static_cast<double>(c.width);
  const double centre = (static_cast<double>(c.width) - 1.0) / 2.0;

  for (int surface_try = 0; surface_try < 200; ++surface_try) {
    const double level = rng.uniform(c.surface_min, c.surface_max);
    const double slope = c.width > 1 ? rng.uniform(-c.surface_trend, c.surface_trend) / 2.0 / centre : 0.0;
    const auto wiggle = detail::smooth_curve(c.width, c.surface_amplitude, min_period, rng);
    std::vector<double> surface(c.width);
    for (std::size_t w = 0; w < c.width; ++w)
      surface[w] = level + slope * (static_cast<double>(w) - centre) + wiggle[w];

    for (int thickness_try = 0; thickness_try < 50; ++thickness_try) {
      const double base = rng.uniform(c.thickness_min, c.thickness_max);
      const auto shared = detail::smooth_curve(c.width, 1.0, min_period, rng);
      GapMatrix gaps{c.width, {}};
      for (std::size_t i = 0; i < layers; ++i) {
        const double layer = base * (1.0 + c.layer_variation * rng.uniform(-1.0, 1.0));
        const auto own = detail::smooth_curve(c.width, 1.0, min_period / 2.0, rng);
        std::vector<double> row(c.width);
        for (std::size_t w = 0; w < c.width; ++w)
          row[w] = layer * (1.0 + c.thickness_jitter * (0.7 * shared[w] + 0.3 * own[w]));
        gaps.rows.push_back(std::move(row));
      }
      BoundaryMatrix m = boundaries_from_gaps(surface, gaps);
      if (in_range(m, c.height) && is_non_crossing(m)) return m;
    }
  }
  throw config_error("sim: could not fit " + std::to_string(layers) + " layers after repeated resampling");
}

/// Bright Gaussian bands on a dark background, exponential attenuation below
/// the surface, diffuse volume scattering and multiplicative speckle.
inline Echogram render_echogram(const BoundaryMatrix& m, const SimConfig& c, std::uint64_t seed) {
  check_shape(m);
  if (m.width != c.width) throw dimension_error("render: boundary width != config width");
  Rng rng(seed);
  std::vector<double> band_brightness(m.rows.size());
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const double jitter = 1.0 + c.brightness_jitter * rng.uniform(-1.0, 1.0);
    band_brightness[i] = i == 0 ? c.brightness : c.brightness * c.internal_ratio * jitter;
  }
  Echogram img(c.height, c.width);
  img.seed = seed;
  img.config_id = c.id();
  const double inv_two_sigma2 = 1.0 / (2.0 * c.band_sigma * c.band_sigma);
  for (std::size_t r = 0; r < c.height; ++r)
    for (std::size_t w = 0; w < c.width; ++w) {
      const double row = static_cast<double>(r);
      const double depth = row - (m.rows.empty() ? 0.0 : m.rows[0][w]);
      double signal = 0.0;
      for (std::size_t i = 0; i < m.rows.size(); ++i) {
        const double d = row - m.rows[i][w];
        signal += band_brightness[i] * std::exp(-d * d * inv_two_sigma2);
      }
      if (depth > 0.0) signal += c.brightness * c.volume_scatter;
      signal *= std::exp(-c.attenuation * std::max(0.0, depth));
      double v = signal;
      if (c.noise > 0.0) {
        const double clutter = 0.1 * c.noise * std::abs(rng.normal());
        const double speckle = std::max(0.0, 1.0 + c.noise * rng.normal());
        v = (signal + clutter) * speckle;
      }
      img.at(r, w) = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

struct SimSample {
  std::uint64_t seed = 0;
  Echogram image;
  BoundaryMatrix boundaries;
};

/// Sample `index` of the dataset defined by `c`: sub-seed from (c.seed, index).
inline SimSample simulate(const SimConfig& c, std::uint64_t index) {
  const std::uint64_t sub = derive_seed(c.seed, index);
  SimSample s;
  s.seed = sub;
  s.boundaries = sample_boundaries(c, sub);
  s.image = render_echogram(s.boundaries, c, derive_seed(sub, 1));
  return s;
}

}  // namespace tierseg
