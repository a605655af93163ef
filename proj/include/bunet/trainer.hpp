#pragma once

// The training loop: seeded epoch shuffling, mini-batches, total-loss
// backward, SGD steps on the poly schedule, periodic validation, best-Dice
// checkpointing and a CSV loss history. Deterministic per seed at a fixed
// thread count.

#include <cstdint>
#include <string>
#include <vector>

#include "bunet/losses.hpp"
#include "bunet/network.hpp"
#include "bunet/optimizer.hpp"
#include "bunet/synth.hpp"

namespace bunet {

struct HistoryRow {
  std::int64_t iter = 0;
  double loss = 0;
  double lr = 0;
};

struct ValPoint {
  std::int64_t iter = 0;
  double dice = 0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::vector<ValPoint> val_history;
  double best_val_dice = -1.0;
  double final_val_dice = -1.0;
  std::int64_t iterations = 0;
  std::string best_checkpoint;  // empty when out_dir was empty
  std::string last_checkpoint;
};

// Mean Dice of the model over a sample set (threshold 0.5, eval mode).
double evaluate_mean_dice(Network<float>& net, const std::vector<Sample>& samples,
                          int batch_size);

// Trains `net` in place. When out_dir is nonempty it receives history.csv,
// best.ckpt (highest validation Dice seen) and last.ckpt; config_json is the
// canonical run config embedded into the checkpoints. An empty val set skips
// validation (no best checkpoint). A non-finite loss aborts with an error
// naming the first non-finite tensor.
TrainResult train_model(Network<float>& net, const TrainConfig& cfg,
                        const std::vector<Sample>& train_set,
                        const std::vector<Sample>& val_set, const LossWeights& weights,
                        const std::string& out_dir, const std::string& config_json);

}  // namespace bunet
