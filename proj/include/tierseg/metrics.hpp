#pragma once

// Padded MAE, layer-AP over a threshold ladder, and layer-count accuracy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "tierseg/boundaries.hpp"
#include "tierseg/errors.hpp"
#include "tierseg/io.hpp"

namespace tierseg {

/// Pixel thresholds defined for 300-row images.
inline const std::vector<double> kApThresholds300{1, 4, 7, 10, 13, 16, 19, 22, 25, 27};

/// t * H / 300 rounded to the nearest 0.1.
inline std::vector<double> scaled_thresholds(std::size_t height, const std::vector<double>& base = kApThresholds300) {
  std::vector<double> out;
  for (double t : base) out.push_back(std::round(t * static_cast<double>(height) / 300.0 * 10.0) / 10.0);
  return out;
}

namespace detail {

inline void require_same_width(const BoundaryMatrix& a, const BoundaryMatrix& b, const char* op) {
  check_shape(a);
  check_shape(b);
  if (!a.rows.empty() && !b.rows.empty() && a.width != b.width)
    throw dimension_error(std::string(op) + ": width " + std::to_string(a.width) + " vs " + std::to_string(b.width));
}

inline double row_mae(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t w = 0; w < a.size(); ++w) s += std::abs(a[w] - b[w]);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

inline double row_mae_vs_zero(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

}  // namespace detail

/// Per-row MAE after padding the shorter matrix with zero rows at the bottom.
inline std::vector<double> per_layer_mae(const BoundaryMatrix& pred, const BoundaryMatrix& gt) {
  detail::require_same_width(pred, gt, "mae_padded");
  const std::size_t rows = std::max(pred.rows.size(), gt.rows.size());
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (i < pred.rows.size() && i < gt.rows.size())
      out[i] = detail::row_mae(pred.rows[i], gt.rows[i]);
    else
      out[i] = detail::row_mae_vs_zero(i < pred.rows.size() ? pred.rows[i] : gt.rows[i]);
  }
  return out;
}

/// Mean absolute row difference over all cells of the zero-padded pair.
inline double mae_padded(const BoundaryMatrix& pred, const BoundaryMatrix& gt) {
  const auto per_row = per_layer_mae(pred, gt);
  if (per_row.empty()) return 0.0;
  double s = 0.0;
  for (double v : per_row) s += v;
  return s / static_cast<double>(per_row.size());
}

struct LayerMatch {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double mae = 0.0;

  friend bool operator==(const LayerMatch&, const LayerMatch&) = default;
};

/// Greedy one-to-one matching by ascending pair MAE; ties go to the smaller
/// predicted index, then the smaller ground-truth index.
inline std::vector<LayerMatch> match_layers(const BoundaryMatrix& pred, const BoundaryMatrix& gt) {
  detail::require_same_width(pred, gt, "layer_ap");
  std::vector<LayerMatch> pairs;
  for (std::size_t p = 0; p < pred.rows.size(); ++p)
    for (std::size_t g = 0; g < gt.rows.size(); ++g) pairs.push_back({p, g, detail::row_mae(pred.rows[p], gt.rows[g])});
  std::sort(pairs.begin(), pairs.end(), [](const LayerMatch& a, const LayerMatch& b) {
    return std::tie(a.mae, a.pred, a.gt) < std::tie(b.mae, b.pred, b.gt);
  });
  std::vector<bool> pred_used(pred.rows.size()), gt_used(gt.rows.size());
  std::vector<LayerMatch> out;
  for (const auto& m : pairs) {
    if (pred_used[m.pred] || gt_used[m.gt]) continue;
    pred_used[m.pred] = gt_used[m.gt] = true;
    out.push_back(m);
  }
  return out;
}

/// (1/L) sum_i m_i / (N+1), m_i = matched layers with pair MAE strictly below t_i.
inline double layer_ap(const BoundaryMatrix& pred, const BoundaryMatrix& gt,
                       const std::vector<double>& thresholds = kApThresholds300) {
  if (thresholds.empty()) throw config_error("layer_ap: no thresholds");
  if (gt.rows.empty()) throw dimension_error("layer_ap: ground truth has no boundaries");
  const auto matches = match_layers(pred, gt);
  double total = 0.0;
  for (double t : thresholds) {
    std::size_t hits = 0;
    for (const auto& m : matches)
      if (m.mae < t) ++hits;
    total += static_cast<double>(hits) / static_cast<double>(gt.rows.size());
  }
  return total / static_cast<double>(thresholds.size());
}

inline double count_accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth) {
  if (predicted.size() != truth.size())
    throw dimension_error("count_accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                          std::to_string(truth.size()) + " labels");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

struct EvalReport {
  std::string id;
  std::size_t gt_layers = 0;
  std::size_t pred_layers = 0;
  double mae_pixels = 0.0;
  double layer_ap = 0.0;
  bool count_correct = false;
  std::vector<double> per_layer_mae;
  std::vector<LayerMatch> matching;
};

inline EvalReport evaluate_sample(std::string id, const BoundaryMatrix& pred, const BoundaryMatrix& gt,
                                  const std::vector<double>& thresholds) {
  EvalReport r;
  r.id = std::move(id);
  r.gt_layers = gt.layer_count();
  r.pred_layers = pred.layer_count();
  r.mae_pixels = mae_padded(pred, gt);
  r.layer_ap = layer_ap(pred, gt, thresholds);
  r.count_correct = pred.rows.size() == gt.rows.size();
  r.per_layer_mae = per_layer_mae(pred, gt);
  r.matching = match_layers(pred, gt);
  return r;
}

/// Aggregate over samples, reduced in index order.
struct EvalSummary {
  std::size_t samples = 0;
  double mae = 0.0;
  double layer_ap = 0.0;
  double count_accuracy = 0.0;
};

inline EvalSummary summarize(const std::vector<EvalReport>& reports) {
  EvalSummary s;
  s.samples = reports.size();
  if (reports.empty()) return s;
  std::size_t correct = 0;
  for (const auto& r : reports) {
    s.mae += r.mae_pixels;
    s.layer_ap += r.layer_ap;
    correct += r.count_correct;
  }
  const double n = static_cast<double>(reports.size());
  s.mae /= n;
  s.layer_ap /= n;
  s.count_accuracy = static_cast<double>(correct) / n;
  return s;
}

/// "id,N_gt,N_pred,mae,layer_ap" per sample, then a "mean" row whose count
/// columns hold the number of samples and the number with the right count.
inline std::string report_csv(const std::vector<EvalReport>& reports) {
  std::string out = "id,N_gt,N_pred,mae,layer_ap\n";
  std::size_t correct = 0;
  for (const auto& r : reports) {
    out += r.id + "," + std::to_string(r.gt_layers) + "," + std::to_string(r.pred_layers) + "," +
           format_real(r.mae_pixels) + "," + format_real(r.layer_ap) + "\n";
    correct += r.count_correct;
  }
  const EvalSummary s = summarize(reports);
  out += "mean," + std::to_string(s.samples) + "," + std::to_string(correct) + "," + format_real(s.mae) + "," +
         format_real(s.layer_ap) + "\n";
  return out;
}

}  // namespace tierseg
