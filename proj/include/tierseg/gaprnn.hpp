#pragma once

// Gap RNN: a GRU rolled out once per layer, each step emitting one row of
// layer thicknesses, plus the cumulative composer that turns the surface
// and gap rows into a boundary matrix.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tierseg/boundaries.hpp"
#include "tierseg/cnn3b.hpp"
#include "tierseg/echogram.hpp"
#include "tierseg/errors.hpp"
#include "tierseg/nn/ops.hpp"
#include "tierseg/nn/params.hpp"
#include "tierseg/preprocess.hpp"
#include "tierseg/rng.hpp"

namespace tierseg {

struct GruConfig {
  std::size_t hidden = 128;
  /// Length of the flattened thickness-branch features (avg_f).
  std::size_t input_size = 4096;
  /// Channels of the shared trunk features, pooled to initialize h0.
  std::size_t pooled_size = 64;
  /// Columns per emitted gap row.
  std::size_t width = 64;

  static GruConfig for_cnn(const Cnn3bConfig& c, std::size_t hidden = 128) {
    return {hidden, c.avg_f_size(), c.trunk_channels(), c.width};
  }

  void validate() const {
    if (hidden == 0 || input_size == 0 || pooled_size == 0 || width == 0)
      throw config_error("gru: every size must be positive");
  }

  friend bool operator==(const GruConfig&, const GruConfig&) = default;
};

/// Parameter names: gru.in, gru.init, gru.out (weight/bias pairs) and the
/// gate tensors gru.w{z,r,h}, gru.u{z,r,h}, gru.b{z,r,h}.
inline nn::ParamSet init_gaprnn(const GruConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  nn::ParamSet p;
  const std::size_t d = c.hidden;
  p.add("gru.in.weight", nn::fan_in_uniform({d, c.input_size}, c.input_size, rng));
  p.add("gru.in.bias", nn::fan_in_uniform({d}, c.input_size, rng));
  p.add("gru.init.weight", nn::fan_in_uniform({d, c.pooled_size}, c.pooled_size, rng));
  p.add("gru.init.bias", nn::fan_in_uniform({d}, c.pooled_size, rng));
  for (const char* gate : {"z", "r", "h"}) {
    const std::string g = gate;
    p.add("gru.w" + g, nn::fan_in_uniform({d, d}, 2 * d, rng));
    p.add("gru.u" + g, nn::fan_in_uniform({d, d}, 2 * d, rng));
    p.add("gru.b" + g, nn::fan_in_uniform({d}, 2 * d, rng));
  }
  p.add("gru.out.weight", nn::fan_in_uniform({c.width, d}, d, rng));
  p.add("gru.out.bias", nn::fan_in_uniform({c.width}, d, rng));
  return p;
}

/// Gate tensors of one GRU cell, already placed on a tape.
struct GruWeights {
  nn::Var wz, uz, bz;
  nn::Var wr, ur, br;
  nn::Var wh, uh, bh;
};

inline GruWeights gru_weights(nn::Tape& t, nn::ParamSet& p) {
  auto v = [&](const char* name) { return t.parameter(p.at(name)); };
  return {v("gru.wz"), v("gru.uz"), v("gru.bz"), v("gru.wr"), v("gru.ur"),
          v("gru.br"), v("gru.wh"), v("gru.uh"), v("gru.bh")};
}

/// z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
/// h~ = tanh(Wh x + Uh (r * h) + bh), h' = (1 - z) * h + z * h~.
inline nn::Var gru_cell(nn::Var h, nn::Var x, const GruWeights& g) {
  if (h.shape().size() != 1 || x.shape().size() != 1)
    throw dimension_error("gru_cell: h and x must be vectors, got " + nn::shape_str(h.shape()) + " and " +
                          nn::shape_str(x.shape()));
  if (g.uz.shape() != nn::Shape{h.size(), h.size()})
    throw dimension_error("gru_cell: hidden size " + std::to_string(h.size()) + " does not match U " +
                          nn::shape_str(g.uz.shape()));
  nn::Var z = nn::sigmoid(nn::add(nn::affine(x, g.wz, g.bz), nn::matvec(g.uz, h)));
  nn::Var r = nn::sigmoid(nn::add(nn::affine(x, g.wr, g.br), nn::matvec(g.ur, h)));
  nn::Var cand = nn::tanh(nn::add(nn::affine(x, g.wh, g.bh), nn::matvec(g.uh, nn::mul(r, h))));
  // (1 - z) h + z h~ = h + z (h~ - h)
  return nn::add(h, nn::mul(z, nn::sub(cand, h)));
}

/// Rows of predicted gaps in normalized thickness units; row n is the gap
/// between boundary n and n+1.
struct GapPrediction {
  std::vector<nn::Var> rows;

  std::size_t steps() const { return rows.size(); }

  std::vector<std::vector<double>> values() const {
    std::vector<std::vector<double>> out;
    for (const auto& r : rows) out.emplace_back(r.value().begin(), r.value().end());
    return out;
  }
};

/// h0 = tanh(P_init pool(shared) + b); every step consumes the same
/// projected avg_f and a shared output head maps h_n to a gap row.
inline GapPrediction rollout(nn::Tape& t, nn::ParamSet& p, const GruConfig& c, nn::Var avg_f, nn::Var shared,
                             std::size_t steps) {
  if (avg_f.size() != c.input_size)
    throw dimension_error("rollout: avg_f has " + std::to_string(avg_f.size()) + " values, expected " +
                          std::to_string(c.input_size));
  GapPrediction pred;
  if (steps == 0) return pred;
  nn::Var pooled = shared.shape().size() == 3 ? nn::global_avg_pool(shared) : nn::flatten(shared);
  nn::Var x = nn::affine(nn::flatten(avg_f), t.parameter(p.at("gru.in.weight")), t.parameter(p.at("gru.in.bias")));
  nn::Var h = nn::tanh(nn::affine(pooled, t.parameter(p.at("gru.init.weight")), t.parameter(p.at("gru.init.bias"))));
  const GruWeights g = gru_weights(t, p);
  nn::Var out_w = t.parameter(p.at("gru.out.weight"));
  nn::Var out_b = t.parameter(p.at("gru.out.bias"));
  for (std::size_t n = 0; n < steps; ++n) {
    h = gru_cell(h, x, g);
    pred.rows.push_back(nn::affine(h, out_w, out_b));
  }
  return pred;
}

/// Mean absolute error over all N x W entries; gt rows in normalized units.
inline nn::Var gap_loss(nn::Tape& t, const GapPrediction& pred, const std::vector<std::vector<double>>& gt) {
  if (gt.empty() || pred.rows.empty()) throw undefined_loss_error("gap_loss: no layers (N = 0)");
  if (gt.size() != pred.rows.size())
    throw dimension_error("gap_loss: " + std::to_string(pred.rows.size()) + " predicted rows vs " +
                          std::to_string(gt.size()) + " target rows");
  const std::size_t w = gt.front().size();
  std::vector<double> flat;
  flat.reserve(gt.size() * w);
  for (const auto& row : gt) {
    if (row.size() != w) throw dimension_error("gap_loss: ragged target rows");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return nn::l1_mean(nn::stack(pred.rows), t.constant(nn::Tensor({gt.size(), w}, std::move(flat))));
}

/// Normalized gap targets for one ground-truth matrix in a height-H image.
inline std::vector<std::vector<double>> normalized_gaps(const BoundaryMatrix& gt, std::size_t height) {
  GapMatrix g = gaps_from_boundaries(gt);
  for (auto& row : g.rows)
    for (double& v : row) v = normalize_gap(v, height);
  return g.rows;
}

/// Cumulative composition in pixel units before clipping; gaps normalized.
inline BoundaryMatrix compose_pixels(const std::vector<double>& surface_norm,
                                     const std::vector<std::vector<double>>& gaps_norm, std::size_t count,
                                     std::size_t height) {
  if (gaps_norm.size() < count)
    throw dimension_error("compose: " + std::to_string(gaps_norm.size()) + " gap rows for " + std::to_string(count) +
                          " layers");
  GapMatrix g{surface_norm.size(), {}};
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> row(gaps_norm[i].size());
    for (std::size_t w = 0; w < row.size(); ++w) row[w] = denormalize_gap(gaps_norm[i][w], height);
    g.rows.push_back(std::move(row));
  }
  return boundaries_from_gaps(denormalize_rows(surface_norm, height), g);
}

/// Final boundary matrix: cumulative gaps from the surface, clipped to [0, H-1].
inline BoundaryMatrix compose_boundaries(const std::vector<double>& surface_norm,
                                         const std::vector<std::vector<double>>& gaps_norm, std::size_t count,
                                         std::size_t height) {
  BoundaryMatrix m = compose_pixels(surface_norm, gaps_norm, count, height);
  const double top = static_cast<double>(height) - 1.0;
  for (auto& row : m.rows)
    for (double& v : row) v = std::clamp(v, 0.0, top);
  return m;
}

/// CNN-only composition: every layer takes the predicted mean thickness.
inline BoundaryMatrix compose_uniform(const std::vector<double>& surface_norm, double mean_gap_norm,
                                      std::size_t count, std::size_t height) {
  std::vector<std::vector<double>> gaps(count, std::vector<double>(surface_norm.size(), mean_gap_norm));
  return compose_boundaries(surface_norm, gaps, count, height);
}

/// Trained two-stage model plus the intensity statistics of its training split.
struct Model {
  Cnn3bConfig cnn_config;
  nn::ParamSet cnn;
  GruConfig rnn_config;
  nn::ParamSet rnn;
  NormStats stats;
};

struct Inference {
  std::size_t count = 0;
  std::size_t predicted_count = 0;
  /// CNN3B + RNN boundaries.
  BoundaryMatrix boundaries;
  /// CNN3B alone (uniform mean thickness).
  BoundaryMatrix uniform;
};

/// Full pipeline on a raw image. Images of another size are resized to the
/// model grid and the result is mapped back to the input's rows and columns.
inline Inference infer(Model& model, const Echogram& raw, std::optional<std::size_t> oracle_count = {}) {
  const Cnn3bConfig& c = model.cnn_config;
  Echogram img = raw;
  const bool resized = raw.height != c.height || raw.width != c.width;
  if (resized) img = resize_bicubic(raw, c.height, c.width);
  img = normalize_intensity(img, model.stats);

  nn::Tape t;
  Cnn3bOutput out = cnn3b_forward(t, model.cnn, c, img.to_tensor());
  Inference res;
  res.predicted_count = out.count_logits ? predict_count(out.count_logits->value()) : 0;
  if (!oracle_count && !out.count_logits) throw config_error("infer: model has no count branch; pass a count");
  res.count = oracle_count ? *oracle_count : res.predicted_count;

  const std::vector<double> surface(out.f_hat.value().begin(), out.f_hat.value().end());
  GapPrediction gaps = rollout(t, model.rnn, model.rnn_config, out.avg_f, out.shared_features, res.count);
  res.boundaries = compose_boundaries(surface, gaps.values(), res.count, c.height);
  res.uniform = compose_uniform(surface, out.delta_hat.item(), res.count, c.height);
  if (resized) {
    for (BoundaryMatrix* m : {&res.boundaries, &res.uniform})
      *m = resize_boundary_columns(resize_boundaries(*m, c.height, raw.height), raw.width);
  }
  return res;
}

}  // namespace tierseg
