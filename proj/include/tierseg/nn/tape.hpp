#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "tierseg/errors.hpp"
#include "tierseg/nn/tensor.hpp"

namespace tierseg::nn {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> value() const;
  double item() const;
  /// Gradient after Tape::backward; empty if the node was not reached.
  std::span<const double> grad() const;
  Tensor to_tensor() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording. Nodes are appended in evaluation order, so the
/// sequence is already topologically sorted; backward walks it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked leaf owning a copy of `t`.
  Var constant(Tensor t) {
    Node n;
    n.shape = t.shape();
    n.owned.assign(t.data().begin(), t.data().end());
    return push(std::move(n));
  }

  /// Tracked leaf whose gradient is kept on the tape only (for gradient checks).
  Var variable(const Tensor& t) {
    Node n;
    n.shape = t.shape();
    n.owned.assign(t.data().begin(), t.data().end());
    n.tracked = true;
    return push(std::move(n));
  }

  /// Leaf that aliases a parameter tensor. If the parameter requires grad,
  /// backward accumulates into `p.grad()` directly, so several tapes sharing
  /// one parameter sum their contributions. `p` must outlive the tape and
  /// stay unmodified until backward completes.
  Var parameter(Tensor& p) {
    Node n;
    n.shape = p.shape();
    n.external = &p.storage();
    if (p.requires_grad()) {
      n.tracked = true;
      n.param = &p;
    }
    return push(std::move(n));
  }

  /// Leaf that aliases a tensor without tracking.
  Var view(const Tensor& t) {
    Node n;
    n.shape = t.shape();
    n.external = &t.storage();
    return push(std::move(n));
  }

  /// Appends an operation result. Tracked iff any input is tracked.
  Var record(Shape shape, std::vector<double> value, std::vector<std::size_t> inputs,
             BackwardFn backward) {
    Node n;
    n.shape = std::move(shape);
    n.owned = std::move(value);
    for (std::size_t in : inputs) n.tracked = n.tracked || nodes_[in].tracked;
    n.inputs = std::move(inputs);
    if (n.tracked) n.backward = std::move(backward);
    return push(std::move(n));
  }

  std::size_t size() const { return nodes_.size(); }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }

  std::span<const double> value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? std::span<const double>(*n.external) : std::span<const double>(n.owned);
  }

  bool tracked(std::size_t id) const { return nodes_[id].tracked; }

  /// Gradient buffer for backward rules; allocated on first use, empty when untracked.
  /// Parameter leaves accumulate straight into the parameter's own buffer.
  std::span<double> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.tracked) return {};
    if (n.param) return n.param->grad();
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
    return n.grad;
  }

  std::span<const double> grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.param) return n.param->grad();
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every tracked node. A tape
  /// supports a single backward pass.
  void backward(Var loss) {
    if (consumed_) throw state_error("backward called twice on the same tape");
    if (loss.size() != 1)
      throw dimension_error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    consumed_ = true;
    if (!nodes_[loss.id()].tracked) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.tracked || n.grad.empty() || !n.backward) continue;
      for (double g : n.grad)
        if (!std::isfinite(g)) throw numeric_error("non-finite gradient on tape node " + std::to_string(id));
      n.backward(*this, id);
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> owned;
    const std::vector<double>* external = nullptr;
    Tensor* param = nullptr;
    std::vector<double> grad;
    bool tracked = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

inline const Shape& Var::shape() const { return tape_->shape(id_); }
inline std::size_t Var::size() const { return tape_->value(id_).size(); }
inline std::span<const double> Var::value() const { return tape_->value(id_); }
inline double Var::item() const {
  if (size() != 1) throw dimension_error("item() on non-scalar of shape " + shape_str(shape()));
  return value()[0];
}
inline std::span<const double> Var::grad() const { return tape_->grad(id_); }
inline Tensor Var::to_tensor() const {
  auto v = value();
  return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

}  // namespace tierseg::nn
