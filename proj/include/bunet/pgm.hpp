#pragma once

// Binary PGM (P5, 8-bit, maxval 255) image I/O — the bit-exact, dependency
// free interchange format for images and masks.

#include <string>

#include "bunet/tensor.hpp"

namespace bunet {

// Reads a P5 PGM into a (1,1,H,W) tensor scaled to [0,1] (v/255).
// Malformed headers, unsupported maxval and truncated payloads produce
// errors that name the file and the byte offset of the problem.
Tensor<float> read_pgm(const std::string& path);

// Writes a (1,1,H,W) map with values in [0,1]; each pixel is round(v*255)
// clamped to [0,255], so binary masks come out as {0,255}.
void write_pgm(const std::string& path, const Tensor<float>& map);

}  // namespace bunet
