#pragma once

// Synthetic ultrasound-like data: dark elliptical lesions on a smooth
// low-frequency background, blurred lesion boundaries, multiplicative
// speckle noise. Deterministic per seed.

#include <cstdint>
#include <string>
#include <vector>

#include "bunet/tensor.hpp"

namespace bunet {

struct Sample {
  Tensor<float> image;     // (1,1,H,W) in [0,1]
  Tensor<float> mask;      // (1,1,H,W) binary
  Tensor<float> boundary;  // (1,1,H,W) binary inner rim of mask
  std::string id;
};

struct SynthConfig {
  int count = 16;
  int size = 256;  // square images; must be divisible by 16
  std::uint64_t seed = 0;
  int blob_min = 1, blob_max = 2;            // lesions per image
  double contrast_min = 0.1, contrast_max = 0.4;  // lesion darkening range
  double speckle_strength = 0.15;            // s in u*(1 + s*eta)
  int blur_radius = 2;                       // box blur of the lesion field

  void validate() const {
    if (count < 1) fail("synth: count must be >= 1");
    if (size < 16 || size % 16 != 0) fail("synth: size must be a positive multiple of 16");
    if (blob_min < 1 || blob_max < blob_min) fail("synth: invalid blob_count_range");
    if (contrast_min < 0 || contrast_max < contrast_min || contrast_max > 1)
      fail("synth: contrast range must satisfy 0 <= min <= max <= 1");
    if (speckle_strength < 0) fail("synth: speckle_strength must be >= 0");
    if (blur_radius < 0) fail("synth: blur_radius must be >= 0");
  }
};

// Generates cfg.count samples. Each sample's randomness comes from its own
// splitmix64 stream seeded with cfg.seed XOR sample_index, so content never
// depends on generation order. Samples violating the mask-fraction window
// (0.005, 0.6) or the pre-noise contrast floor (mean |inside - outside| >=
// 0.05) are redrawn from the same stream.
std::vector<Sample> synth_generate(const SynthConfig& cfg);

}  // namespace bunet
