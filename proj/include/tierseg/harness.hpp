#pragma once

// Dataset split, the two training stages, evaluation and overlay export.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "tierseg/cnn3b.hpp"
#include "tierseg/dataset.hpp"
#include "tierseg/dpbaseline.hpp"
#include "tierseg/errors.hpp"
#include "tierseg/gaprnn.hpp"
#include "tierseg/io.hpp"
#include "tierseg/metrics.hpp"
#include "tierseg/nn/adam.hpp"
#include "tierseg/nn/checkpoint.hpp"
#include "tierseg/preprocess.hpp"
#include "tierseg/rng.hpp"

namespace tierseg {

struct TrainConfig {
  std::size_t batch = 16;
  std::size_t epochs = 30;
  double cnn_lr = 1e-4;
  double rnn_lr = 1e-3;
  /// The learning rate halves after every this many epochs; 0 keeps it fixed.
  std::size_t halve_every = 10;
  double split = 0.8;
  std::uint64_t seed = 1;
  /// Stop after this many optimizer steps when non-zero.
  std::size_t max_steps = 0;
  LossWeights weights{};

  void validate() const {
    if (batch == 0) throw config_error("train: batch must be positive");
    if (!(cnn_lr > 0.0) || !(rnn_lr > 0.0)) throw config_error("train: learning rates must be positive");
    if (!(split > 0.0 && split < 1.0)) throw config_error("train: split fraction must be in (0, 1)");
  }

  double lr_at(double base, std::size_t epoch) const {
    return halve_every == 0 ? base : base * std::ldexp(1.0, -static_cast<int>(epoch / halve_every));
  }
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffles 0..count-1 with the seed; the first round(fraction * count) train.
inline Split split_dataset(std::size_t count, double fraction, std::uint64_t seed) {
  if (count == 0) throw config_error("split: dataset is empty");
  if (!(fraction > 0.0 && fraction < 1.0)) throw config_error("split: fraction must be in (0, 1)");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

/// Text form: one "<id> train|test" line per sample.
inline std::string split_text(const std::vector<Sample>& samples, const Split& s) {
  std::string out;
  for (std::size_t i : s.train) out += samples.at(i).id + " train\n";
  for (std::size_t i : s.test) out += samples.at(i).id + " test\n";
  return out;
}

/// Resolves a split file against the loaded samples by id.
inline Split parse_split(const std::string& text, const std::vector<Sample>& samples) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i].id] = i;
  Split s;
  std::istringstream is(text);
  std::string id, part;
  while (is >> id >> part) {
    auto it = index.find(id);
    if (it == index.end()) throw config_error("split: unknown sample id " + id);
    if (part == "train")
      s.train.push_back(it->second);
    else if (part == "test")
      s.test.push_back(it->second);
    else
      throw config_error("split: bad partition '" + part + "' for " + id);
  }
  return s;
}

template <typename T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items.at(i));
  return out;
}

/// One sample mapped to the model grid, intensity-normalized, with targets.
struct Prepared {
  std::string id;
  nn::Tensor image;
  BoundaryMatrix gt;
  Cnn3bTargets targets;
  std::vector<std::vector<double>> gaps;
};

inline Prepared prepare(const Sample& s, const NormStats& stats, const Cnn3bConfig& c) {
  Echogram img = s.image;
  BoundaryMatrix gt = s.gt;
  fit_to_grid(img, gt, c.height, c.width);
  Prepared p;
  p.id = s.id;
  p.image = normalize_intensity(img, stats).to_tensor();
  p.targets.surface = normalize_rows(gt.rows.at(0), c.height);
  p.targets.count = gt.layer_count();
  p.gaps = normalized_gaps(gt, c.height);
  if (!p.gaps.empty()) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : p.gaps)
      for (double v : row) {
        sum += v;
        ++n;
      }
    p.targets.mean_gap = sum / static_cast<double>(n);
  }
  p.gt = std::move(gt);
  return p;
}

inline NormStats fit_train_stats(const std::vector<Sample>& train, const Cnn3bConfig& c) {
  std::vector<Echogram> images;
  images.reserve(train.size());
  for (const auto& s : train)
    images.push_back(s.image.height == c.height && s.image.width == c.width ? s.image
                                                                             : resize_bicubic(s.image, c.height, c.width));
  return fit_stats(images);
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double surface = 0.0;
  double count = 0.0;
  double gap = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline std::string loss_csv(const std::vector<EpochLog>& log, bool cnn) {
  std::string out = cnn ? "epoch,lr,loss,surface,count,gap\n" : "epoch,lr,loss\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + format_real(e.lr) + "," + format_real(e.loss);
    if (cnn) out += "," + format_real(e.surface) + "," + format_real(e.count) + "," + format_real(e.gap);
    out += "\n";
  }
  return out;
}

namespace detail {

// Mini-batch driver shared by both stages: per-epoch reshuffle, mean batch
// gradient, one Adam step per batch. `step` runs forward+backward for one
// item and returns its loss terms.
template <typename StepFn>
std::vector<EpochLog> run_epochs(nn::ParamSet& params, std::size_t items, const TrainConfig& tc, double base_lr,
                                 std::uint64_t stream, StepFn step, const EpochCallback& on_epoch) {
  std::vector<EpochLog> log;
  if (items == 0) return log;
  nn::AdamState adam;
  std::size_t steps = 0;
  params.zero_grad();
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(items);
    for (std::size_t i = 0; i < items; ++i) order[i] = i;
    Rng rng(derive_seed(derive_seed(tc.seed, stream), epoch));
    shuffle(order, rng);
    EpochLog e;
    e.epoch = epoch;
    e.lr = adam.learning_rate = tc.lr_at(base_lr, epoch);
    for (std::size_t start = 0; start < items; start += tc.batch) {
      const std::size_t end = std::min(items, start + tc.batch);
      for (std::size_t k = start; k < end; ++k) {
        EpochLog terms;
        try {
          terms = step(order[k]);
        } catch (const numeric_error& err) {
          throw numeric_error("epoch " + std::to_string(epoch) + ", step " + std::to_string(steps) + ": " +
                              err.what());
        }
        e.loss += terms.loss;
        e.surface += terms.surface;
        e.count += terms.count;
        e.gap += terms.gap;
      }
      params.scale_grad(1.0 / static_cast<double>(end - start));
      nn::adam_step(params, adam);
      params.zero_grad();
      if (tc.max_steps && ++steps >= tc.max_steps) break;
    }
    const double n = static_cast<double>(items);
    e.loss /= n;
    e.surface /= n;
    e.count /= n;
    e.gap /= n;
    log.push_back(e);
    if (on_epoch) on_epoch(e);
    if (tc.max_steps && steps >= tc.max_steps) break;
  }
  return log;
}

}  // namespace detail

struct CnnTraining {
  nn::ParamSet params;
  NormStats stats;
  std::vector<EpochLog> log;
};

/// Stage one. Intensity statistics come from `train` only.
inline CnnTraining train_cnn3b(const std::vector<Sample>& train, const Cnn3bConfig& c, const TrainConfig& tc,
                               const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (train.empty()) throw config_error("train_cnn3b: no training samples");
  CnnTraining out;
  out.stats = fit_train_stats(train, c);
  std::vector<Prepared> data;
  data.reserve(train.size());
  for (const auto& s : train) data.push_back(prepare(s, out.stats, c));
  out.params = init_cnn3b(c, derive_seed(tc.seed, 1));
  out.log = detail::run_epochs(
      out.params, data.size(), tc, tc.cnn_lr, 11,
      [&](std::size_t i) {
        nn::Tape t;
        Cnn3bOutput fwd = cnn3b_forward(t, out.params, c, data[i].image);
        Cnn3bLoss l = cnn3b_loss(t, fwd, data[i].targets, tc.weights);
        t.backward(l.total);
        return EpochLog{0, 0.0, l.total.item(), l.surface, l.count, l.gap};
      },
      on_epoch);
  return out;
}

/// Frozen-CNN inputs for the RNN.
struct RnnFeatures {
  nn::Tensor avg_f;
  nn::Tensor shared;
  std::vector<std::vector<double>> gaps;
};

inline RnnFeatures cnn_features(nn::ParamSet& cnn, const Cnn3bConfig& c, const Prepared& p) {
  nn::Tape t;
  Cnn3bOutput fwd = cnn3b_forward(t, cnn, c, p.image);
  return {fwd.avg_f.to_tensor(), fwd.shared_features.to_tensor(), p.gaps};
}

struct RnnTraining {
  nn::ParamSet params;
  std::vector<EpochLog> log;
  /// Samples left out because they have no internal layers.
  std::size_t skipped = 0;
};

/// Stage two: the CNN is only read; samples with N = 0 are skipped.
inline RnnTraining train_gaprnn(const std::vector<Sample>& train, nn::ParamSet& cnn, const Cnn3bConfig& c,
                                const NormStats& stats, const GruConfig& gc, const TrainConfig& tc,
                                const EpochCallback& on_epoch = {}) {
  tc.validate();
  RnnTraining out;
  std::vector<RnnFeatures> feats;
  for (const auto& s : train) {
    Prepared p = prepare(s, stats, c);
    if (p.gaps.empty()) {
      ++out.skipped;
      continue;
    }
    feats.push_back(cnn_features(cnn, c, p));
  }
  out.params = init_gaprnn(gc, derive_seed(tc.seed, 2));
  out.log = detail::run_epochs(
      out.params, feats.size(), tc, tc.rnn_lr, 12,
      [&](std::size_t i) {
        nn::Tape t;
        const RnnFeatures& f = feats[i];
        GapPrediction pred = rollout(t, out.params, gc, t.view(f.avg_f), t.view(f.shared), f.gaps.size());
        nn::Var loss = gap_loss(t, pred, f.gaps);
        t.backward(loss);
        EpochLog e;
        e.loss = loss.item();
        return e;
      },
      on_epoch);
  return out;
}

// ---------------------------------------------------------------------------
// Model files

inline KeyValues cnn_config_kv(const Cnn3bConfig& c, const NormStats& stats) {
  KeyValues kv;
  kv.set("height", std::uint64_t{c.height});
  kv.set("width", std::uint64_t{c.width});
  kv.set_list("trunk_widths", c.trunk_widths);
  kv.set("branch_width", std::uint64_t{c.branch_width});
  kv.set("branch_convs", std::uint64_t{c.branch_convs});
  kv.set_list("count_hidden", c.count_hidden);
  kv.set("count_classes", std::uint64_t{c.count_classes});
  kv.set("count_branch", c.count_branch);
  kv.set("norm_mean", stats.mean);
  kv.set("norm_std", stats.std);
  return kv;
}

inline std::pair<Cnn3bConfig, NormStats> cnn_config_from_kv(const KeyValues& kv) {
  Cnn3bConfig c;
  c.height = kv.integer("height");
  c.width = kv.integer("width");
  c.trunk_widths.clear();
  for (auto v : kv.integers("trunk_widths")) c.trunk_widths.push_back(v);
  c.branch_width = kv.integer("branch_width");
  c.branch_convs = kv.integer("branch_convs");
  c.count_hidden.clear();
  for (auto v : kv.integers("count_hidden")) c.count_hidden.push_back(v);
  c.count_classes = kv.integer("count_classes");
  c.count_branch = kv.boolean("count_branch");
  c.validate();
  return {c, {kv.real("norm_mean"), kv.real("norm_std")}};
}

inline KeyValues gru_config_kv(const GruConfig& g) {
  KeyValues kv;
  kv.set("hidden", std::uint64_t{g.hidden});
  kv.set("input_size", std::uint64_t{g.input_size});
  kv.set("pooled_size", std::uint64_t{g.pooled_size});
  kv.set("width", std::uint64_t{g.width});
  return kv;
}

inline GruConfig gru_config_from_kv(const KeyValues& kv) {
  GruConfig g{kv.integer("hidden"), kv.integer("input_size"), kv.integer("pooled_size"), kv.integer("width")};
  g.validate();
  return g;
}

/// <dir>/cnn.ckpt + cnn.cfg
inline void save_cnn(const std::filesystem::path& dir, const nn::ParamSet& p, const Cnn3bConfig& c,
                     const NormStats& stats) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(p, dir / "cnn.ckpt");
  cnn_config_kv(c, stats).save(dir / "cnn.cfg");
}

/// <dir>/rnn.ckpt + rnn.cfg
inline void save_rnn(const std::filesystem::path& dir, const nn::ParamSet& p, const GruConfig& g) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(p, dir / "rnn.ckpt");
  gru_config_kv(g).save(dir / "rnn.cfg");
}

inline void require_file(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw config_error("missing checkpoint file " + p.string());
}

/// Loads the CNN stage, and the RNN stage too unless `cnn_only`.
inline Model load_model(const std::filesystem::path& dir, bool cnn_only = false) {
  Model m;
  require_file(dir / "cnn.cfg");
  require_file(dir / "cnn.ckpt");
  std::tie(m.cnn_config, m.stats) = cnn_config_from_kv(KeyValues::load(dir / "cnn.cfg"));
  m.cnn = init_cnn3b(m.cnn_config, 0);
  nn::assign_params(m.cnn, nn::load_checkpoint(dir / "cnn.ckpt"));
  if (cnn_only) return m;
  require_file(dir / "rnn.cfg");
  require_file(dir / "rnn.ckpt");
  m.rnn_config = gru_config_from_kv(KeyValues::load(dir / "rnn.cfg"));
  m.rnn = init_gaprnn(m.rnn_config, 0);
  nn::assign_params(m.rnn, nn::load_checkpoint(dir / "rnn.ckpt"));
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MethodReports {
  std::vector<EvalReport> oracle;
  std::vector<EvalReport> predicted;
};

struct Evaluation {
  MethodReports rnn;
  MethodReports cnn;
  /// Oracle-count DP baseline; empty unless requested.
  std::vector<EvalReport> dp;
  std::vector<std::size_t> true_counts;
  std::vector<std::size_t> predicted_counts;

  double count_accuracy() const { return tierseg::count_accuracy(predicted_counts, true_counts); }
};

/// Metrics are computed in the model grid; thresholds are scaled to its height.
inline Evaluation evaluate(Model& model, const std::vector<Sample>& samples, bool with_dp = false,
                           const DpConfig& dp = {}) {
  const Cnn3bConfig& c = model.cnn_config;
  const auto thresholds = scaled_thresholds(c.height);
  Evaluation ev;
  for (const auto& s : samples) {
    Prepared p = prepare(s, model.stats, c);
    nn::Tape t;
    Cnn3bOutput fwd = cnn3b_forward(t, model.cnn, c, p.image);
    const std::size_t n_true = p.gt.layer_count();
    const std::size_t n_pred = fwd.count_logits ? predict_count(fwd.count_logits->value()) : n_true;
    const std::vector<double> surface(fwd.f_hat.value().begin(), fwd.f_hat.value().end());
    const auto gaps =
        rollout(t, model.rnn, model.rnn_config, fwd.avg_f, fwd.shared_features, std::max(n_true, n_pred)).values();
    const double delta = fwd.delta_hat.item();
    ev.true_counts.push_back(n_true);
    ev.predicted_counts.push_back(n_pred);
    ev.rnn.oracle.push_back(evaluate_sample(p.id, compose_boundaries(surface, gaps, n_true, c.height), p.gt, thresholds));
    ev.rnn.predicted.push_back(
        evaluate_sample(p.id, compose_boundaries(surface, gaps, n_pred, c.height), p.gt, thresholds));
    ev.cnn.oracle.push_back(evaluate_sample(p.id, compose_uniform(surface, delta, n_true, c.height), p.gt, thresholds));
    ev.cnn.predicted.push_back(
        evaluate_sample(p.id, compose_uniform(surface, delta, n_pred, c.height), p.gt, thresholds));
    if (with_dp) {
      Echogram raw = s.image;
      if (raw.height != c.height || raw.width != c.width) raw = resize_bicubic(raw, c.height, c.width);
      BoundaryMatrix found;
      try {
        found = sequential_track(raw, n_true, dp);
      } catch (const partial_track_error& e) {
        found = e.found();
      }
      ev.dp.push_back(evaluate_sample(p.id, found, p.gt, thresholds));
    }
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Overlay export

/// Binary PPM: grayscale image with each boundary drawn as a coloured polyline.
inline std::string overlay_ppm(const Echogram& img, const BoundaryMatrix& m) {
  static const unsigned char palette[][3] = {{255, 64, 64},  {64, 200, 255}, {255, 200, 0}, {80, 255, 80},
                                             {255, 0, 255},  {255, 128, 0},  {0, 128, 255}, {200, 255, 200}};
  check_shape(m);
  if (!m.rows.empty() && m.width != img.width) throw dimension_error("overlay: boundary width != image width");
  std::vector<unsigned char> rgb(img.height * img.width * 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto v = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
    rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = v;
  }
  const double top = static_cast<double>(img.height) - 1.0;
  auto row_of = [&](double r) { return static_cast<std::size_t>(std::lround(std::clamp(r, 0.0, top))); };
  for (std::size_t b = 0; b < m.rows.size(); ++b) {
    const unsigned char* col = palette[b % 8];
    for (std::size_t c = 0; c < m.width; ++c) {
      std::size_t lo = row_of(m.rows[b][c]), hi = lo;
      if (c + 1 < m.width) {
        // Join to the next column's point with a vertical run.
        const std::size_t next = row_of(m.rows[b][c + 1]);
        lo = std::min(lo, next);
        hi = std::max(hi, next);
      }
      for (std::size_t r = lo; r <= hi; ++r)
        for (int k = 0; k < 3; ++k) rgb[(r * img.width + c) * 3 + static_cast<std::size_t>(k)] = col[k];
    }
  }
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}

inline void export_overlay(const Echogram& img, const BoundaryMatrix& m, const std::filesystem::path& path) {
  write_text(path, overlay_ppm(img, m));
}

}  // namespace tierseg
