#pragma once

// Binary maps (thresholded predictions, ground-truth masks) and the boundary
// extraction shared by the metric and data pipelines.

#include <cstdint>
#include <vector>

#include "bunet/tensor.hpp"

namespace bunet {

struct BinaryMap {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;  // row-major, values 0/1

  BinaryMap() = default;
  BinaryMap(int height, int width) : h(height), w(width), v(static_cast<std::size_t>(height) * width, 0) {}

  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (std::uint8_t b : v) n += b;
    return n;
  }
};

// Thresholds a (1,1,H,W) probability map at `thr` (strictly greater).
BinaryMap threshold_map(const Tensor<float>& prob, float thr = 0.5f);

// Inner morphological gradient: mask AND NOT erode3x3(mask) with 4-connected
// erosion (a pixel survives erosion iff it and its 4 neighbors are all set;
// border pixels never survive). Produces the 1-pixel inner rim.
BinaryMap extract_boundary(const BinaryMap& mask);

// Tensor convenience wrappers (single-sample maps).
Tensor<float> extract_boundary(const Tensor<float>& mask);
BinaryMap tensor_to_map(const Tensor<float>& t);
Tensor<float> map_to_tensor(const BinaryMap& m);

}  // namespace bunet
