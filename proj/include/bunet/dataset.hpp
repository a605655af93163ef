#pragma once

// Dataset directory I/O and train/val splitting.
//
// Layout: <dir>/images/<id>.pgm + <dir>/masks/<id>.pgm, plus optional
// train.txt / val.txt manifests (newline-separated ids) pinning the split.

#include <string>
#include <utility>
#include <vector>

#include "bunet/synth.hpp"

namespace bunet {

// Writes images/ and masks/ (and nothing else) for the given samples.
void save_dataset(const std::string& dir, const std::vector<Sample>& samples);

// Loads every image under <dir>/images (sorted by id), pairing each with its
// mask (missing mask -> error naming the id). Both maps are resized to
// target_size (image bilinear, mask nearest-neighbor then re-binarized) and
// the boundary target is derived from the resized mask.
std::vector<Sample> load_dataset(const std::string& dir, int target_size);

// Seeded shuffle then ratio cut: round(ratio * n) samples go to train.
std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(std::vector<Sample> samples,
                                                                  double ratio,
                                                                  std::uint64_t seed);

// Manifest helpers. write_manifests records the split; apply_manifests
// partitions loaded samples by the recorded ids (both files must exist;
// returns false if either is absent). Ids present in a manifest but missing
// from the samples are an error.
void write_manifests(const std::string& dir, const std::vector<Sample>& train,
                     const std::vector<Sample>& val);
bool apply_manifests(const std::string& dir, const std::vector<Sample>& all,
                     std::vector<Sample>& train, std::vector<Sample>& val);

// Nearest-neighbor resize of a binary (1,1,H,W) map.
Tensor<float> resize_nearest(const Tensor<float>& map, int out_h, int out_w);

// Bilinear resize of a (1,1,H,W) image (no autograd).
Tensor<float> resize_bilinear(const Tensor<float>& img, int out_h, int out_w);

}  // namespace bunet
