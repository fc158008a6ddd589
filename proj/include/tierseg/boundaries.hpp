#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tierseg/errors.hpp"

namespace tierseg {

/// Per-column row coordinates of N+1 boundaries, surface first.
struct BoundaryMatrix {
  std::size_t width = 0;
  std::vector<std::vector<double>> rows;

  std::size_t boundary_count() const { return rows.size(); }
  /// Number of layer gaps N (boundaries minus one); zero for an empty matrix.
  std::size_t layer_count() const { return rows.empty() ? 0 : rows.size() - 1; }

  friend bool operator==(const BoundaryMatrix&, const BoundaryMatrix&) = default;
};

/// N x W positive thicknesses between adjacent boundaries.
struct GapMatrix {
  std::size_t width = 0;
  std::vector<std::vector<double>> rows;

  friend bool operator==(const GapMatrix&, const GapMatrix&) = default;
};

/// True when every column is strictly increasing from top to bottom.
inline bool is_non_crossing(const BoundaryMatrix& m) {
  for (std::size_t i = 1; i < m.rows.size(); ++i)
    for (std::size_t w = 0; w < m.width; ++w)
      if (!(m.rows[i - 1][w] < m.rows[i][w])) return false;
  return true;
}

inline bool in_range(const BoundaryMatrix& m, std::size_t height) {
  const double top = static_cast<double>(height) - 1.0;
  for (const auto& row : m.rows)
    for (double v : row)
      if (!(v >= 0.0 && v <= top)) return false;
  return true;
}

inline void check_shape(const BoundaryMatrix& m) {
  for (const auto& row : m.rows)
    if (row.size() != m.width)
      throw dimension_error("boundary row length " + std::to_string(row.size()) + " != width " +
                            std::to_string(m.width));
}

/// Throws invariant_error unless the matrix is well formed, non-crossing
/// and within [0, height-1].
inline void validate(const BoundaryMatrix& m, std::size_t height) {
  check_shape(m);
  if (m.rows.empty()) throw invariant_error("boundary matrix has no surface row");
  if (!is_non_crossing(m)) throw invariant_error("boundary rows cross or touch");
  if (!in_range(m, height)) throw invariant_error("boundary coordinate outside [0, H-1]");
}

/// gaps[i][w] = rows[i+1][w] - rows[i][w]; rejects non-positive gaps.
inline GapMatrix gaps_from_boundaries(const BoundaryMatrix& m) {
  check_shape(m);
  GapMatrix g{m.width, {}};
  for (std::size_t i = 1; i < m.rows.size(); ++i) {
    std::vector<double> row(m.width);
    for (std::size_t w = 0; w < m.width; ++w) {
      row[w] = m.rows[i][w] - m.rows[i - 1][w];
      if (!(row[w] > 0.0))
        throw invariant_error("non-positive gap between boundaries " + std::to_string(i - 1) + " and " +
                              std::to_string(i) + " at column " + std::to_string(w));
    }
    g.rows.push_back(std::move(row));
  }
  return g;
}

/// Cumulative sum M_i = M_{i-1} + G_i starting from the surface row.
inline BoundaryMatrix boundaries_from_gaps(const std::vector<double>& surface, const GapMatrix& g) {
  BoundaryMatrix m{surface.size(), {surface}};
  for (const auto& gap : g.rows) {
    if (gap.size() != surface.size())
      throw dimension_error("gap row length " + std::to_string(gap.size()) + " != surface width " +
                            std::to_string(surface.size()));
    std::vector<double> next(surface.size());
    for (std::size_t w = 0; w < next.size(); ++w) next[w] = m.rows.back()[w] + gap[w];
    m.rows.push_back(std::move(next));
  }
  return m;
}

/// Mean of all gap entries (the per-image mean thickness); 0 when N = 0.
inline double mean_gap(const GapMatrix& g) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& row : g.rows)
    for (double v : row) {
      s += v;
      ++n;
    }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

}  // namespace tierseg
