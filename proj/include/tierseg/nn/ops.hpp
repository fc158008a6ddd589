#pragma once

// Differentiable operations recorded on a Tape. Every op checks its
// argument shapes, computes the forward value eagerly and registers a
// backward rule that accumulates into the gradient buffers of its tracked
// inputs.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tierseg/errors.hpp"
#include "tierseg/nn/tape.hpp"

namespace tierseg::nn {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw state_error(std::string(op) + ": operands live on different tapes");
}

inline void require_rank(const Var& v, std::size_t rank, const char* op, const char* arg) {
  if (v.shape().size() != rank)
    throw dimension_error(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                          ", got shape " + shape_str(v.shape()));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw dimension_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

inline void require_finite(std::span<const double> v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x)) throw numeric_error(std::string(op) + ": non-finite input");
}

// Valid output columns [lo, hi) for kernel column offset kj: those whose
// input column ow + kj - pad falls inside [0, width).
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t kj, std::size_t pad, std::size_t width,
                                                      std::size_t out_w) {
  const std::size_t lo = pad > kj ? pad - kj : 0;
  const std::size_t hi = std::min(out_w, width + pad - kj);
  return {std::min(lo, hi), hi};
}

// Unpacks every (channel, ki, kj) tap of a k x k window into one row of a
// (C*k*k) x (Ho*Wo) matrix so that convolution becomes a single GEMM.
inline void im2col(std::span<const double> in, std::size_t channels, std::size_t height,
                   std::size_t width, std::size_t k, std::size_t pad, std::size_t out_h,
                   std::size_t out_w, std::vector<double>& col) {
  const std::size_t plane = out_h * out_w;
  col.resize(channels * k * k * plane);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = col.data() + ((c * k + ki) * k + kj) * plane;
        const auto [lo, hi] = valid_span(kj, pad, width, out_w);
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          double* dst = row + oh * out_w;
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = in.data() + (c * height + static_cast<std::size_t>(ih)) * width;
          std::fill(dst, dst + lo, 0.0);
          if (hi > lo) std::copy(src + (lo + kj - pad), src + (hi + kj - pad), dst + lo);
          std::fill(dst + hi, dst + out_w, 0.0);
        }
      }
}

inline void col2im_add(const RowMat& dcol, std::size_t channels, std::size_t height, std::size_t width,
                       std::size_t k, std::size_t pad, std::size_t out_h, std::size_t out_w,
                       std::span<double> din) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = dcol.data() + ((c * k + ki) * k + kj) * (out_h * out_w);
        const auto [lo, hi] = valid_span(kj, pad, width, out_w);
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = din.data() + (c * height + static_cast<std::size_t>(ih)) * width;
          const double* src = row + oh * out_w;
          for (std::size_t ow = lo; ow < hi; ++ow) dst[ow + kj - pad] += src[ow];
        }
      }
}

template <typename F, typename DF>
Var unary(Var x, const char* name, F f, DF df_from_xy) {
  auto xv = x.value();
  require_finite(xv, name);
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(y), {xid}, [xid, df_from_xy](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto xs = t.value(xid);
    auto ys = t.value(self);
    auto gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df_from_xy(xs[i], ys[i]);
  });
}

}  // namespace detail

/// Cross-correlation of a [C_in,H,W] input with [C_out,C_in,k,k] weights, odd k,
/// zero padding on all sides.
inline Var conv2d(Var input, Var weights, Var bias, std::size_t padding) {
  detail::require_same_tape(input, weights, "conv2d");
  detail::require_same_tape(input, bias, "conv2d");
  detail::require_rank(input, 3, "conv2d", "input");
  detail::require_rank(weights, 4, "conv2d", "weights");
  detail::require_rank(bias, 1, "conv2d", "bias");
  const Shape& is = input.shape();
  const Shape& ws = weights.shape();
  const std::size_t c_in = is[0], height = is[1], width = is[2];
  const std::size_t c_out = ws[0], k = ws[2];
  if (ws[1] != c_in)
    throw dimension_error("conv2d: weight axis 1 (" + std::to_string(ws[1]) + ") != input channels (" +
                          std::to_string(c_in) + ")");
  if (ws[2] != ws[3]) throw dimension_error("conv2d: kernel axes 2 and 3 differ " + shape_str(ws));
  if (k % 2 == 0) throw dimension_error("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (bias.shape()[0] != c_out)
    throw dimension_error("conv2d: bias axis 0 (" + std::to_string(bias.shape()[0]) +
                          ") != weight axis 0 (" + std::to_string(c_out) + ")");
  if (height + 2 * padding < k || width + 2 * padding < k)
    throw dimension_error("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                          shape_str(is));
  const std::size_t out_h = height + 2 * padding - k + 1;
  const std::size_t out_w = width + 2 * padding - k + 1;
  const std::size_t plane = out_h * out_w;
  const std::size_t taps = c_in * k * k;

  auto col = std::make_shared<std::vector<double>>();
  detail::im2col(input.value(), c_in, height, width, k, padding, out_h, out_w, *col);

  std::vector<double> out(c_out * plane);
  detail::MutMap out_m(out.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(plane));
  detail::ConstMap w_m(weights.value().data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(taps));
  detail::ConstMap col_m(col->data(), static_cast<Eigen::Index>(taps), static_cast<Eigen::Index>(plane));
  out_m.noalias() = w_m * col_m;
  auto bv = bias.value();
  for (std::size_t o = 0; o < c_out; ++o) out_m.row(static_cast<Eigen::Index>(o)).array() += bv[o];

  const std::size_t in_id = input.id(), w_id = weights.id(), b_id = bias.id();
  return input.tape().record(
      {c_out, out_h, out_w}, std::move(out), {in_id, w_id, b_id},
      [=](Tape& t, std::size_t self) {
        const auto rows = static_cast<Eigen::Index>(c_out);
        const auto cols = static_cast<Eigen::Index>(plane);
        detail::ConstMap g(t.grad(self).data(), rows, cols);
        detail::ConstMap cm(col->data(), static_cast<Eigen::Index>(taps), cols);
        if (auto gw = t.grad_buffer(w_id); !gw.empty()) {
          detail::MutMap gw_m(gw.data(), rows, static_cast<Eigen::Index>(taps));
          gw_m.noalias() += g * cm.transpose();
        }
        if (auto gb = t.grad_buffer(b_id); !gb.empty()) {
          // Plain loop: Eigen's vectorized sum peels by address alignment,
          // which would make the result depend on the allocator.
          const double* gp = t.grad(self).data();
          for (std::size_t o = 0; o < c_out; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += gp[o * plane + i];
            gb[o] += s;
          }
        }
        if (auto gi = t.grad_buffer(in_id); !gi.empty()) {
          detail::ConstMap wm(t.value(w_id).data(), rows, static_cast<Eigen::Index>(taps));
          detail::RowMat dcol = wm.transpose() * g;
          detail::col2im_add(dcol, c_in, height, width, k, padding, out_h, out_w, gi);
        }
      });
}

/// Non-overlapping window x window max pooling over [C,H,W]. Ties resolve to
/// the first cell in row-major order within each window.
inline Var maxpool2d(Var input, std::size_t window = 2) {
  detail::require_rank(input, 3, "maxpool2d", "input");
  const Shape& is = input.shape();
  const std::size_t channels = is[0], height = is[1], width = is[2];
  if (window == 0 || height % window != 0)
    throw dimension_error("maxpool2d: axis 1 (" + std::to_string(height) + ") not divisible by window " +
                          std::to_string(window));
  if (width % window != 0)
    throw dimension_error("maxpool2d: axis 2 (" + std::to_string(width) + ") not divisible by window " +
                          std::to_string(window));
  const std::size_t out_h = height / window, out_w = width / window;
  auto xv = input.value();
  std::vector<double> out(channels * out_h * out_w);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t oh = 0; oh < out_h; ++oh)
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        std::size_t best = (c * height + oh * window) * width + ow * window;
        for (std::size_t di = 0; di < window; ++di)
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = (c * height + oh * window + di) * width + ow * window + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (c * out_h + oh) * out_w + ow;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
  const std::size_t in_id = input.id();
  return input.tape().record({channels, out_h, out_w}, std::move(out), {in_id},
                             [in_id, argmax](Tape& t, std::size_t self) {
                               auto g = t.grad(self);
                               auto gi = t.grad_buffer(in_id);
                               for (std::size_t o = 0; o < g.size(); ++o) gi[(*argmax)[o]] += g[o];
                             });
}

/// y = W x + b for x of shape [D_in], W of shape [D_out, D_in], b of shape [D_out].
inline Var affine(Var x, Var weights, Var bias) {
  detail::require_same_tape(x, weights, "affine");
  detail::require_same_tape(x, bias, "affine");
  detail::require_rank(x, 1, "affine", "input");
  detail::require_rank(weights, 2, "affine", "weights");
  detail::require_rank(bias, 1, "affine", "bias");
  const std::size_t d_out = weights.shape()[0], d_in = weights.shape()[1];
  if (x.shape()[0] != d_in)
    throw dimension_error("affine: input axis 0 (" + std::to_string(x.shape()[0]) + ") != weight axis 1 (" +
                          std::to_string(d_in) + ")");
  if (bias.shape()[0] != d_out)
    throw dimension_error("affine: bias axis 0 (" + std::to_string(bias.shape()[0]) + ") != weight axis 0 (" +
                          std::to_string(d_out) + ")");
  const auto ro = static_cast<Eigen::Index>(d_out), ri = static_cast<Eigen::Index>(d_in);
  std::vector<double> out(d_out);
  detail::MutVec y(out.data(), ro);
  y.noalias() = detail::ConstMap(weights.value().data(), ro, ri) * detail::ConstVec(x.value().data(), ri);
  y += detail::ConstVec(bias.value().data(), ro);
  const std::size_t x_id = x.id(), w_id = weights.id(), b_id = bias.id();
  return x.tape().record({d_out}, std::move(out), {x_id, w_id, b_id}, [=](Tape& t, std::size_t self) {
    detail::ConstVec g(t.grad(self).data(), ro);
    if (auto gw = t.grad_buffer(w_id); !gw.empty())
      detail::MutMap(gw.data(), ro, ri).noalias() += g * detail::ConstVec(t.value(x_id).data(), ri).transpose();
    if (auto gb = t.grad_buffer(b_id); !gb.empty()) detail::MutVec(gb.data(), ro) += g;
    if (auto gx = t.grad_buffer(x_id); !gx.empty())
      detail::MutVec(gx.data(), ri).noalias() += detail::ConstMap(t.value(w_id).data(), ro, ri).transpose() * g;
  });
}

/// y = W x without a bias term.
inline Var matvec(Var weights, Var x) {
  detail::require_same_tape(x, weights, "matvec");
  detail::require_rank(x, 1, "matvec", "input");
  detail::require_rank(weights, 2, "matvec", "weights");
  const std::size_t d_out = weights.shape()[0], d_in = weights.shape()[1];
  if (x.shape()[0] != d_in)
    throw dimension_error("matvec: input axis 0 (" + std::to_string(x.shape()[0]) + ") != weight axis 1 (" +
                          std::to_string(d_in) + ")");
  const auto ro = static_cast<Eigen::Index>(d_out), ri = static_cast<Eigen::Index>(d_in);
  std::vector<double> out(d_out);
  detail::MutVec(out.data(), ro).noalias() =
      detail::ConstMap(weights.value().data(), ro, ri) * detail::ConstVec(x.value().data(), ri);
  const std::size_t x_id = x.id(), w_id = weights.id();
  return x.tape().record({d_out}, std::move(out), {x_id, w_id}, [=](Tape& t, std::size_t self) {
    detail::ConstVec g(t.grad(self).data(), ro);
    if (auto gw = t.grad_buffer(w_id); !gw.empty())
      detail::MutMap(gw.data(), ro, ri).noalias() += g * detail::ConstVec(t.value(x_id).data(), ri).transpose();
    if (auto gx = t.grad_buffer(x_id); !gx.empty())
      detail::MutVec(gx.data(), ri).noalias() += detail::ConstMap(t.value(w_id).data(), ro, ri).transpose() * g;
  });
}

/// Rectified linear unit; the subgradient at 0 is 0.
inline Var relu(Var x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var scale(Var x, double factor) {
  return detail::unary(
      x, "scale", [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

namespace detail {

template <typename F, typename DA, typename DB>
Var binary(Var a, Var b, const char* name, F f, DA da, DB db) {
  require_same_tape(a, b, name);
  require_same_shape(a, b, name);
  auto av = a.value(), bv = b.value();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(av[i], bv[i]);
  const std::size_t a_id = a.id(), b_id = b.id();
  return a.tape().record(a.shape(), std::move(y), {a_id, b_id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto as = t.value(a_id), bs = t.value(b_id);
    if (auto ga = t.grad_buffer(a_id); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(as[i], bs[i]);
    if (auto gb = t.grad_buffer(b_id); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(as[i], bs[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

/// Sum of all elements, shape [1].
inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  const std::size_t x_id = x.id();
  return x.tape().record({1}, {s}, {x_id}, [x_id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& gx : t.grad_buffer(x_id)) gx += g;
  });
}

/// Same data, new shape of equal element count.
inline Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw dimension_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xv = x.value();
  const std::size_t x_id = x.id();
  return x.tape().record(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x_id},
                         [x_id](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto gx = t.grad_buffer(x_id);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

inline Var flatten(Var x) { return reshape(x, {x.size()}); }

/// Stacks equally shaped values along a new leading axis.
inline Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw dimension_error("stack: no inputs");
  const Shape& inner = parts.front().shape();
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> out;
  out.reserve(shape_size(shape));
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::require_same_tape(parts.front(), p, "stack");
    if (p.shape() != inner)
      throw dimension_error("stack: part shape " + shape_str(p.shape()) + " differs from " + shape_str(inner));
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(p.id());
  }
  const std::size_t stride = shape_size(inner);
  return parts.front().tape().record(std::move(shape), std::move(out), ids,
                                     [ids, stride](Tape& t, std::size_t self) {
                                       auto g = t.grad(self);
                                       for (std::size_t p = 0; p < ids.size(); ++p) {
                                         auto gp = t.grad_buffer(ids[p]);
                                         if (gp.empty()) continue;
                                         for (std::size_t i = 0; i < stride; ++i) gp[i] += g[p * stride + i];
                                       }
                                     });
}

/// Per-channel spatial mean of a [C,H,W] tensor.
inline Var global_avg_pool(Var input) {
  detail::require_rank(input, 3, "global_avg_pool", "input");
  const std::size_t channels = input.shape()[0];
  const std::size_t plane = input.shape()[1] * input.shape()[2];
  auto xv = input.value();
  std::vector<double> out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xv[c * plane + i];
    out[c] = s / static_cast<double>(plane);
  }
  const std::size_t in_id = input.id();
  return input.tape().record({channels}, std::move(out), {in_id}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gi = t.grad_buffer(in_id);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) gi[c * plane + i] += g[c] * inv;
  });
}

/// -log softmax(logits)[target], evaluated with the max subtracted.
inline Var softmax_cross_entropy(Var logits, std::size_t target) {
  detail::require_rank(logits, 1, "softmax_cross_entropy", "logits");
  const std::size_t k = logits.shape()[0];
  if (target >= k)
    throw index_error("softmax_cross_entropy: target class " + std::to_string(target) + " outside [0, " +
                      std::to_string(k) + ")");
  auto v = logits.value();
  detail::require_finite(v, "softmax_cross_entropy");
  const double peak = *std::max_element(v.begin(), v.end());
  auto probs = std::make_shared<std::vector<double>>(k);
  double z = 0.0;
  for (std::size_t j = 0; j < k; ++j) z += ((*probs)[j] = std::exp(v[j] - peak));
  for (double& p : *probs) p /= z;
  const double loss = -(v[target] - peak - std::log(z));
  const std::size_t l_id = logits.id();
  return logits.tape().record({1}, {loss}, {l_id}, [=](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto gl = t.grad_buffer(l_id);
    for (std::size_t j = 0; j < k; ++j) gl[j] += g * ((*probs)[j] - (j == target ? 1.0 : 0.0));
  });
}

/// Mean absolute difference; sign(pred - target) backward with 0 on ties.
inline Var l1_mean(Var pred, Var target) {
  detail::require_same_tape(pred, target, "l1_mean");
  detail::require_same_shape(pred, target, "l1_mean");
  auto pv = pred.value(), tv = target.value();
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += std::abs(pv[i] - tv[i]);
  const double n = static_cast<double>(pv.size());
  const std::size_t p_id = pred.id(), t_id = target.id();
  return pred.tape().record({1}, {s / n}, {p_id, t_id}, [=](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / n;
    auto ps = t.value(p_id), ts = t.value(t_id);
    auto gp = t.grad_buffer(p_id);
    auto gt = t.grad_buffer(t_id);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const double d = ps[i] - ts[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (!gp.empty()) gp[i] += g * sgn;
      if (!gt.empty()) gt[i] -= g * sgn;
    }
  });
}

}  // namespace tierseg::nn
