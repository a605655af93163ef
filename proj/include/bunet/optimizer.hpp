#pragma once

// SGD with momentum and decoupled-by-flag weight decay, plus the polynomial
// learning-rate schedule.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bunet/params.hpp"

namespace bunet {

struct TrainConfig {
  double lr0 = 0.001;
  double weight_decay = 0.0001;
  double momentum = 0.9;
  double power = 0.9;  // poly schedule exponent
  int epochs = 40;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int eval_every = 50;  // validation cadence in iterations

  void validate() const {
    if (lr0 <= 0) fail("train config: lr0 must be > 0");
    if (momentum < 0 || momentum >= 1) fail("train config: momentum must be in [0,1)");
    if (weight_decay < 0) fail("train config: weight_decay must be >= 0");
    if (power <= 0) fail("train config: power must be > 0");
    if (epochs < 1 || batch_size < 1 || eval_every < 1)
      fail("train config: epochs, batch_size and eval_every must be >= 1");
  }
};

// lr0 * (1 - iter/max_iter)^power.
double poly_lr(std::int64_t iter, std::int64_t max_iter, const TrainConfig& cfg);

// Momentum buffers keyed by parameter name (ordered, so serialization is
// deterministic).
using Velocities = std::map<std::string, std::vector<float>>;

// One SGD step over every learnable entry:
//   g' = g + weight_decay * w   (only for decay-flagged entries)
//   v  = momentum * v + g'
//   w  = w - lr * v
// Velocity buffers are created on first use. A learnable entry without a
// populated gradient buffer is an error naming the parameter.
void sgd_step(ModuleParams<float>& params, Velocities& velocity, double lr,
              const TrainConfig& cfg);

}  // namespace bunet
