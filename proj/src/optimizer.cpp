#include "bunet/optimizer.hpp"

#include <cmath>

namespace bunet {

double poly_lr(std::int64_t iter, std::int64_t max_iter, const TrainConfig& cfg) {
  if (max_iter < 1) fail("poly_lr: max_iter must be >= 1");
  if (iter < 0 || iter > max_iter)
    fail("poly_lr: iter " + std::to_string(iter) + " outside [0, " + std::to_string(max_iter) +
         "]");
  return cfg.lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter),
                            cfg.power);
}

void sgd_step(ModuleParams<float>& params, Velocities& velocity, double lr,
              const TrainConfig& cfg) {
  for (auto& e : params.entries()) {
    if (!e.learnable) continue;
    const std::vector<float>* g = e.tensor.grad();
    if (!g || static_cast<std::int64_t>(g->size()) != e.tensor.numel())
      fail("sgd_step: missing gradient for parameter '" + e.name + "'");
    std::vector<float>& v = velocity[e.name];
    if (v.empty()) v.assign(e.tensor.numel(), 0.0f);
    float* w = e.tensor.data();
    const float mu = static_cast<float>(cfg.momentum);
    const float wd = e.decay ? static_cast<float>(cfg.weight_decay) : 0.0f;
    const float flr = static_cast<float>(lr);
    for (std::int64_t i = 0; i < e.tensor.numel(); ++i) {
      const float gp = (*g)[i] + wd * w[i];
      v[i] = mu * v[i] + gp;
      w[i] -= flr * v[i];
    }
  }
}

}  // namespace bunet
