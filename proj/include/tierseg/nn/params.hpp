#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>
#include <utility>

#include "tierseg/errors.hpp"
#include "tierseg/nn/tensor.hpp"
#include "tierseg/rng.hpp"

namespace tierseg::nn {

/// Named parameter tensors in insertion order. Element addresses are stable
/// under insertion so tapes may alias them.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(std::string name, Tensor t) {
    if (index_.contains(name)) throw config_error("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(t)});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw config_error("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
  }
  const Tensor& at(const std::string& name) const { return const_cast<ParamSet*>(this)->at(name); }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
  }

  /// Multiplies every gradient buffer by `factor` (batch averaging).
  void scale_grad(double factor) {
    for (auto& e : entries_)
      for (double& g : e.tensor.grad()) g *= factor;
  }

  /// Values equal (names, shapes, bits); gradients ignored.
  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].tensor == b.entries_[i].tensor))
        return false;
    return true;
  }

 private:
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) tensor.
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

/// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)): variance 2/fan_in, for layers followed by ReLU.
inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace tierseg::nn
