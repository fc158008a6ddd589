#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tierseg/nn/tensor.hpp"

namespace tierseg {

/// Single-channel H x W intensity grid, row-major, with provenance.
struct Echogram {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  std::uint64_t seed = 0;
  std::string config_id;

  Echogram() = default;
  Echogram(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  /// [1, H, W] network input.
  nn::Tensor to_tensor() const { return nn::Tensor({1, height, width}, pixels); }
};

}  // namespace tierseg
