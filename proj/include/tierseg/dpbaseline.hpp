#pragma once

// Sequential energy-minimization baseline: a matched-filter cost map and
// one exact Viterbi pass per boundary, top-down, each constrained to lie
// below the previous path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tierseg/boundaries.hpp"
#include "tierseg/echogram.hpp"
#include "tierseg/errors.hpp"

namespace tierseg {

struct DpConfig {
  /// Weight of the truncated-linear smoothness term.
  double lambda = 0.5;
  /// Jump size beyond which smoothness cost stops growing.
  std::size_t max_jump = 3;
  /// Minimum row separation between consecutive boundaries.
  std::size_t min_separation = 2;
  /// Half-width of the bright centre of the matched filter.
  std::size_t half_width = 1;

  void validate() const {
    if (!(lambda >= 0.0)) throw config_error("dp: lambda must be >= 0");
    if (max_jump < 1) throw config_error("dp: max_jump must be >= 1");
    if (min_separation < 1) throw config_error("dp: min_separation must be >= 1");
  }
};

/// H x W costs, row-major; lower is more boundary-like.
struct CostMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
};

/// Negative correlation with a zero-sum vertical dark-bright-dark template:
/// +1/(2k+1) on |d| <= k, -1/(2k+2) on k < |d| <= 2k+1. Rows clamp at edges.
inline CostMap boundary_response(const Echogram& img, const DpConfig& cfg = {}) {
  const long k = static_cast<long>(cfg.half_width);
  const double bright = 1.0 / static_cast<double>(2 * k + 1);
  const double dark = -1.0 / static_cast<double>(2 * k + 2);
  CostMap cost{img.height, img.width, std::vector<double>(img.height * img.width, 0.0)};
  const long last = static_cast<long>(img.height) - 1;
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      double pos = 0.0, neg = 0.0;
      for (long d = -(2 * k + 1); d <= 2 * k + 1; ++d) {
        const long rr = std::clamp(static_cast<long>(r) + d, 0L, last);
        const double v = img.at(static_cast<std::size_t>(rr), c);
        if (std::abs(d) <= k)
          pos += v;
        else
          neg += v;
      }
      cost.at(r, c) = -(bright * pos + dark * neg);
    }
  return cost;
}

/// Exact minimizer of sum_w cost[r_w][w] + lambda * sum_w min(|r_{w+1} - r_w|, J)
/// subject to r_w > floor[w]. O(H * J * W). Among equal-cost paths the
/// smaller row wins at every decision.
inline std::vector<long> track_layer_viterbi(const CostMap& cost, const std::vector<long>& floor,
                                             const DpConfig& cfg = {}) {
  cfg.validate();
  const std::size_t h = cost.height, w = cost.width;
  if (floor.size() != w)
    throw dimension_error("viterbi: floor has " + std::to_string(floor.size()) + " entries for width " +
                          std::to_string(w));
  if (w == 0) return {};
  for (std::size_t c = 0; c < w; ++c)
    if (floor[c] + 1 > static_cast<long>(h) - 1)
      throw feasibility_error("viterbi: no admissible row in column " + std::to_string(c));

  constexpr double inf = std::numeric_limits<double>::infinity();
  const long jump = static_cast<long>(cfg.max_jump);
  auto first_row = [&](std::size_t c) { return static_cast<std::size_t>(std::max(floor[c] + 1, 0L)); };

  std::vector<double> prev(h, inf), cur(h, inf);
  std::vector<std::size_t> back(h * w, 0);
  for (std::size_t r = first_row(0); r < h; ++r) prev[r] = cost.at(r, 0);

  for (std::size_t c = 1; c < w; ++c) {
    // Far jumps all cost lambda * J: the best is the global minimum.
    std::size_t best_row = h;
    for (std::size_t r = 0; r < h; ++r)
      if (prev[r] < inf && (best_row == h || prev[r] < prev[best_row])) best_row = r;
    const double far = prev[best_row] + cfg.lambda * static_cast<double>(jump);

    std::fill(cur.begin(), cur.end(), inf);
    for (std::size_t r = first_row(c); r < h; ++r) {
      double best = inf;
      std::size_t arg = h;
      const long lo = std::max(0L, static_cast<long>(r) - jump + 1);
      const long hi = std::min(static_cast<long>(h) - 1, static_cast<long>(r) + jump - 1);
      for (long q = lo; q <= hi; ++q) {
        const double v = prev[static_cast<std::size_t>(q)] + cfg.lambda * static_cast<double>(std::abs(q - static_cast<long>(r)));
        if (v < best) {
          best = v;
          arg = static_cast<std::size_t>(q);
        }
      }
      if (far < best || (far == best && best_row < arg)) {
        best = far;
        arg = best_row;
      }
      cur[r] = best + cost.at(r, c);
      back[c * h + r] = arg;
    }
    std::swap(prev, cur);
  }

  std::size_t end = h;
  for (std::size_t r = 0; r < h; ++r)
    if (prev[r] < inf && (end == h || prev[r] < prev[end])) end = r;
  std::vector<long> path(w);
  path[w - 1] = static_cast<long>(end);
  for (std::size_t c = w - 1; c > 0; --c) path[c - 1] = static_cast<long>(back[c * h + static_cast<std::size_t>(path[c])]);
  return path;
}

/// Objective value of a path under the same energy (for checks and reports).
inline double path_energy(const CostMap& cost, const std::vector<long>& path, const DpConfig& cfg = {}) {
  double e = 0.0;
  for (std::size_t c = 0; c < path.size(); ++c) {
    e += cost.at(static_cast<std::size_t>(path[c]), c);
    if (c > 0) {
      const long d = std::abs(path[c] - path[c - 1]);
      e += cfg.lambda * static_cast<double>(std::min(d, static_cast<long>(cfg.max_jump)));
    }
  }
  return e;
}

/// Raised when fewer than the requested boundaries fit; carries what was found.
class partial_track_error : public feasibility_error {
 public:
  partial_track_error(const std::string& what, BoundaryMatrix found)
      : feasibility_error(what), found_(std::move(found)) {}
  const BoundaryMatrix& found() const { return found_; }

 private:
  BoundaryMatrix found_;
};

/// Tracks `layers` + 1 boundaries top-down. Boundary i+1 is confined to rows
/// at least `min_separation` below boundary i, so the output never crosses.
inline BoundaryMatrix sequential_track(const Echogram& img, std::size_t layers, const DpConfig& cfg = {}) {
  cfg.validate();
  const CostMap cost = boundary_response(img, cfg);
  BoundaryMatrix m{img.width, {}};
  std::vector<long> floor(img.width, -1);
  for (std::size_t i = 0; i <= layers; ++i) {
    std::vector<long> path;
    try {
      path = track_layer_viterbi(cost, floor, cfg);
    } catch (const feasibility_error&) {
      const std::string what = "sequential_track: found " + std::to_string(m.rows.size()) + " of " +
                               std::to_string(layers + 1) + " boundaries";
      throw partial_track_error(what, std::move(m));
    }
    std::vector<double> row(img.width);
    for (std::size_t c = 0; c < img.width; ++c) {
      row[c] = static_cast<double>(path[c]);
      floor[c] = path[c] + static_cast<long>(cfg.min_separation) - 1;
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

}  // namespace tierseg
