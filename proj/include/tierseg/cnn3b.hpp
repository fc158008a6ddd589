#pragma once

// Triple-task CNN: a shared convolutional trunk followed by three branches
// that regress the surface boundary, classify the boundary count and
// regress the mean layer thickness.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tierseg/errors.hpp"
#include "tierseg/nn/ops.hpp"
#include "tierseg/nn/params.hpp"
#include "tierseg/rng.hpp"

namespace tierseg {

struct Cnn3bConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  /// One conv-ReLU-conv-ReLU-maxpool block per entry.
  std::vector<std::size_t> trunk_widths{16, 32, 64};
  std::size_t branch_width = 64;
  std::size_t branch_convs = 6;
  std::vector<std::size_t> count_hidden{256, 64};
  std::size_t count_classes = 31;
  /// False gives the two-branch (surface + thickness) ablation.
  bool count_branch = true;

  std::size_t downsample() const { return std::size_t{1} << trunk_widths.size(); }
  std::size_t feature_height() const { return height / downsample(); }
  std::size_t feature_width() const { return width / downsample(); }
  std::size_t trunk_channels() const { return trunk_widths.back(); }
  /// Length of the flattened thickness-branch feature map fed to the RNN.
  std::size_t avg_f_size() const { return branch_width * feature_height() * feature_width(); }

  void validate() const {
    if (trunk_widths.empty()) throw config_error("cnn3b: trunk needs at least one block");
    if (branch_convs == 0 || branch_width == 0) throw config_error("cnn3b: branch needs convolutions");
    if (height == 0 || width == 0 || height % downsample() != 0 || width % downsample() != 0)
      throw config_error("cnn3b: input " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by " + std::to_string(downsample()));
    if (count_branch && count_classes != 31)
      throw config_error("cnn3b: count branch must have 31 classes, got " + std::to_string(count_classes));
  }

  friend bool operator==(const Cnn3bConfig&, const Cnn3bConfig&) = default;
};

/// Forward results on a tape. `count_logits` is empty in two-branch mode.
struct Cnn3bOutput {
  nn::Var f_hat;
  std::optional<nn::Var> count_logits;
  nn::Var delta_hat;
  nn::Var avg_f;
  nn::Var shared_features;
};

namespace detail {

// Layers feeding a ReLU get He-uniform weights; output layers get the
// smaller fan-in bound. Biases start at zero.
inline void add_conv(nn::ParamSet& p, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
  p.add(name + ".weight", nn::he_uniform({out, in, 3, 3}, in * 9, rng));
  p.add(name + ".bias", nn::Tensor({out}, 0.0));
}

inline void add_fc(nn::ParamSet& p, const std::string& name, std::size_t out, std::size_t in, Rng& rng,
                   bool relu_follows) {
  p.add(name + ".weight", relu_follows ? nn::he_uniform({out, in}, in, rng) : nn::fan_in_uniform({out, in}, in, rng));
  p.add(name + ".bias", nn::Tensor({out}, 0.0));
}

inline nn::Var conv_relu(nn::Tape& t, nn::ParamSet& p, const std::string& name, nn::Var x) {
  return nn::relu(nn::conv2d(x, t.parameter(p.at(name + ".weight")), t.parameter(p.at(name + ".bias")), 1));
}

inline nn::Var fc(nn::Tape& t, nn::ParamSet& p, const std::string& name, nn::Var x) {
  return nn::affine(x, t.parameter(p.at(name + ".weight")), t.parameter(p.at(name + ".bias")));
}

inline nn::Var branch_convs(nn::Tape& t, nn::ParamSet& p, const Cnn3bConfig& c, const std::string& branch,
                            nn::Var x) {
  for (std::size_t i = 0; i < c.branch_convs; ++i) x = conv_relu(t, p, branch + ".conv" + std::to_string(i), x);
  return x;
}

}  // namespace detail

/// Random initialization. Each branch draws from its own sub-seed so
/// that enabling or disabling the count branch leaves the others unchanged.
inline nn::ParamSet init_cnn3b(const Cnn3bConfig& c, std::uint64_t seed) {
  c.validate();
  nn::ParamSet p;
  {
    Rng rng(derive_seed(seed, 0));
    std::size_t in = 1;
    for (std::size_t b = 0; b < c.trunk_widths.size(); ++b) {
      const std::string name = "trunk" + std::to_string(b);
      detail::add_conv(p, name + ".conv0", c.trunk_widths[b], in, rng);
      detail::add_conv(p, name + ".conv1", c.trunk_widths[b], c.trunk_widths[b], rng);
      in = c.trunk_widths[b];
    }
  }
  auto add_branch = [&](const std::string& branch, Rng& rng) {
    std::size_t in = c.trunk_channels();
    for (std::size_t i = 0; i < c.branch_convs; ++i) {
      detail::add_conv(p, branch + ".conv" + std::to_string(i), c.branch_width, in, rng);
      in = c.branch_width;
    }
  };
  const std::size_t flat = c.avg_f_size();
  {
    Rng rng(derive_seed(seed, 1));
    add_branch("surface", rng);
    detail::add_fc(p, "surface.fc", c.width, flat, rng, false);
  }
  if (c.count_branch) {
    Rng rng(derive_seed(seed, 2));
    add_branch("count", rng);
    std::size_t in = flat;
    for (std::size_t j = 0; j < c.count_hidden.size(); ++j) {
      detail::add_fc(p, "count.fc" + std::to_string(j), c.count_hidden[j], in, rng, true);
      in = c.count_hidden[j];
    }
    detail::add_fc(p, "count.fc" + std::to_string(c.count_hidden.size()), c.count_classes, in, rng, false);
  }
  {
    Rng rng(derive_seed(seed, 3));
    add_branch("gap", rng);
    detail::add_fc(p, "gap.fc", 1, flat, rng, false);
  }
  return p;
}

/// Runs the network on a normalized [1, H, W] image.
inline Cnn3bOutput cnn3b_forward(nn::Tape& t, nn::ParamSet& p, const Cnn3bConfig& c, const nn::Tensor& image) {
  if (image.shape() != nn::Shape{1, c.height, c.width})
    throw dimension_error("cnn3b: image shape " + nn::shape_str(image.shape()) + " != [1," +
                          std::to_string(c.height) + "," + std::to_string(c.width) + "]");
  nn::Var x = t.constant(image);
  for (std::size_t b = 0; b < c.trunk_widths.size(); ++b) {
    const std::string name = "trunk" + std::to_string(b);
    x = detail::conv_relu(t, p, name + ".conv0", x);
    x = detail::conv_relu(t, p, name + ".conv1", x);
    x = nn::maxpool2d(x, 2);
  }
  Cnn3bOutput out;
  out.shared_features = x;

  out.f_hat = detail::fc(t, p, "surface.fc", nn::flatten(detail::branch_convs(t, p, c, "surface", x)));

  if (c.count_branch) {
    nn::Var h = nn::flatten(detail::branch_convs(t, p, c, "count", x));
    for (std::size_t j = 0; j < c.count_hidden.size(); ++j)
      h = nn::relu(detail::fc(t, p, "count.fc" + std::to_string(j), h));
    out.count_logits = detail::fc(t, p, "count.fc" + std::to_string(c.count_hidden.size()), h);
  }

  out.avg_f = nn::flatten(detail::branch_convs(t, p, c, "gap", x));
  out.delta_hat = detail::fc(t, p, "gap.fc", out.avg_f);
  return out;
}

/// Supervision for one image, in normalized coordinates.
struct Cnn3bTargets {
  std::vector<double> surface;
  std::size_t count = 0;
  /// Mean thickness; absent when the image has no internal layers.
  std::optional<double> mean_gap;
};

struct LossWeights {
  double surface = 1.0;
  double count = 1.0;
  double gap = 1.0;
};

struct Cnn3bLoss {
  nn::Var total;
  double surface = 0.0;
  double count = 0.0;
  double gap = 0.0;
};

/// L = L_surface + L_count + L_gap (unit weights by default). Disabled or
/// undefined terms contribute nothing.
inline Cnn3bLoss cnn3b_loss(nn::Tape& t, const Cnn3bOutput& out, const Cnn3bTargets& target,
                            const LossWeights& weights = {}) {
  if (target.surface.size() != out.f_hat.size())
    throw dimension_error("cnn3b_loss: surface target length " + std::to_string(target.surface.size()) +
                          " != prediction length " + std::to_string(out.f_hat.size()));
  Cnn3bLoss loss;
  nn::Var l_fl = nn::l1_mean(out.f_hat, t.constant(nn::Tensor::vector(target.surface)));
  loss.surface = l_fl.item();
  nn::Var total = weights.surface == 1.0 ? l_fl : nn::scale(l_fl, weights.surface);
  if (out.count_logits) {
    if (target.count >= out.count_logits->size())
      throw index_error("cnn3b_loss: count class " + std::to_string(target.count) + " outside [0, " +
                        std::to_string(out.count_logits->size()) + ")");
    nn::Var l_n = nn::softmax_cross_entropy(*out.count_logits, target.count);
    loss.count = l_n.item();
    total = nn::add(total, weights.count == 1.0 ? l_n : nn::scale(l_n, weights.count));
  }
  if (target.mean_gap) {
    nn::Var l_d = nn::l1_mean(out.delta_hat, t.constant(nn::Tensor::scalar(*target.mean_gap)));
    loss.gap = l_d.item();
    total = nn::add(total, weights.gap == 1.0 ? l_d : nn::scale(l_d, weights.gap));
  }
  loss.total = total;
  return loss;
}

/// Argmax of the count logits; ties go to the smaller count.
inline std::size_t predict_count(std::span<const double> logits) {
  if (logits.empty()) throw dimension_error("predict_count: no logits");
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j)
    if (logits[j] > logits[best]) best = j;
  return best;
}

}  // namespace tierseg
