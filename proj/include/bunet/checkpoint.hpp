#pragma once

// Checkpoint binary format (all integers little-endian, names and the
// embedded config length-prefixed):
//
//   bytes 0..3   magic "PBEU"
//   u32          format version (1)
//   u64          FNV-1a digest of the embedded config JSON
//   u32 + bytes  config JSON (canonical run config; lets eval/predict
//                rebuild the network without a separate --config)
//   u64          iteration counter
//   u32          array count, then per array:
//                  u32 + bytes name; u32 rank; u32 dims[rank]; f32 data
//   u32          velocity count, then per velocity:
//                  u32 + bytes name; u32 length; f32 data
//
// Arrays cover every registry entry (parameters and batch-norm running
// state), so load(save(x)) reproduces the model bit-exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "bunet/optimizer.hpp"
#include "bunet/params.hpp"

namespace bunet {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  std::string config_json;
  std::uint64_t config_digest = 0;
  std::uint64_t iteration = 0;
  std::vector<NamedArray> arrays;
  std::vector<NamedArray> velocities;
};

void save_checkpoint(const std::string& path, const ModuleParams<float>& params,
                     const Velocities& velocity, std::uint64_t iteration,
                     const std::string& config_json);

// Parses and validates the container (magic, version, digest). Structural
// problems produce errors naming the file and what was wrong.
CheckpointData load_checkpoint(const std::string& path);

// Copies the stored arrays into a freshly built registry. Every stored array
// must exist with an identical shape, and every registry entry must be
// covered — mismatches are errors naming the parameter. Velocities are
// restored into `velocity` when non-null.
void apply_checkpoint(const CheckpointData& ckpt, ModuleParams<float>& params,
                      Velocities* velocity = nullptr);

}  // namespace bunet
