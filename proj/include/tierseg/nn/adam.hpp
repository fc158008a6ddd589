#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tierseg/errors.hpp"
#include "tierseg/nn/params.hpp"

namespace tierseg::nn {

/// Adam optimizer state with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update over every parameter in `params`, using
/// the gradients currently stored on them.
inline void adam_step(ParamSet& params, AdamState& state) {
  if (!(state.learning_rate > 0.0)) throw config_error("adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& e : params) {
      state.first_moment.emplace_back(e.tensor.size(), 0.0);
      state.second_moment.emplace_back(e.tensor.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw state_error("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                      " parameters, got " + std::to_string(params.size()));
  std::size_t idx = 0;
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) throw state_error("adam_step: parameter '" + e.name + "' has no gradient");
    if (state.first_moment[idx].size() != e.tensor.size())
      throw state_error("adam_step: moment buffer shape differs for '" + e.name + "'");
    ++idx;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  idx = 0;
  for (auto& e : params) {
    auto data = e.tensor.data();
    auto grad = e.tensor.grad();
    auto& m = state.first_moment[idx];
    auto& v = state.second_moment[idx];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      data[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    ++idx;
  }
}

}  // namespace tierseg::nn
