#pragma once

// The JSON run configuration shared by every CLI subcommand. One document
// carries the model, training, synthesis and loss settings plus the train/val
// split ratio; unknown keys anywhere are rejected. The canonical serialization
// (sorted keys, all defaults materialized) is what gets digested and embedded
// into checkpoints, so a checkpoint alone reconstructs its network.

#include <cstdint>
#include <string>

#include "bunet/losses.hpp"
#include "bunet/network.hpp"
#include "bunet/optimizer.hpp"
#include "bunet/synth.hpp"

namespace bunet {

struct RunConfig {
  NetConfig model;
  TrainConfig train;
  SynthConfig synth;
  LossWeights loss;
  double split_ratio = 0.8;

  void validate() const;
};

// Parses a JSON document (text). Missing keys take defaults; unknown keys are
// an error naming the key and its section. Validates before returning.
RunConfig parse_run_config(const std::string& json_text);

// Reads and parses a config file; an empty path yields the defaults.
RunConfig load_run_config(const std::string& path);

// Canonical form: every key present, keys sorted, no whitespace.
std::string canonical_config_json(const RunConfig& cfg);

// FNV-1a digest of the canonical form; stored in checkpoints.
std::uint64_t config_digest(const RunConfig& cfg);

}  // namespace bunet
