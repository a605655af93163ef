#include "bunet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bunet/checkpoint.hpp"
#include "bunet/metrics.hpp"
#include "bunet/rng.hpp"

namespace fs = std::filesystem;

namespace bunet {

namespace {

// Stacks samples[ids] into batched image / mask / boundary tensors.
struct Batch {
  Tensor<float> image, mask, boundary;
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& ids,
                 std::size_t begin, std::size_t end) {
  const int B = static_cast<int>(end - begin);
  const Shape s0 = samples[ids[begin]].image.shape();
  const int H = s0.h(), W = s0.w();
  Batch b{Tensor<float>(Shape::nchw(B, 1, H, W)), Tensor<float>(Shape::nchw(B, 1, H, W)),
          Tensor<float>(Shape::nchw(B, 1, H, W))};
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (int i = 0; i < B; ++i) {
    const Sample& s = samples[ids[begin + i]];
    if (s.image.shape() != s0)
      fail("train: sample '" + s.id + "' has shape " + s.image.shape().str() +
           ", expected " + s0.str());
    std::copy(s.image.data(), s.image.data() + plane, b.image.data() + i * plane);
    std::copy(s.mask.data(), s.mask.data() + plane, b.mask.data() + i * plane);
    std::copy(s.boundary.data(), s.boundary.data() + plane, b.boundary.data() + i * plane);
  }
  return b;
}

bool all_finite(const float* d, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i)
    if (!std::isfinite(d[i])) return false;
  return true;
}

// Names the first tensor containing a non-finite value, for the NaN abort
// diagnostic. Scans the loss, the network outputs, then every parameter.
std::string first_nonfinite(const Tensor<float>& loss, const NetOutput<float>& out,
                            ModuleParams<float>& params) {
  if (!all_finite(loss.data(), loss.numel())) return "loss";
  if (!all_finite(out.mask_logits.data(), out.mask_logits.numel())) return "mask_logits";
  if (!all_finite(out.mask_prob.data(), out.mask_prob.numel())) return "mask_prob";
  for (std::size_t k = 0; k < out.boundary_probs.size(); ++k)
    if (!all_finite(out.boundary_probs[k].data(), out.boundary_probs[k].numel()))
      return "boundary_probs[" + std::to_string(k) + "]";
  for (const auto& e : params.entries())
    if (!all_finite(e.tensor.data(), e.tensor.numel())) return e.name;
  return "loss";
}

}  // namespace

double evaluate_mean_dice(Network<float>& net, const std::vector<Sample>& samples,
                          int batch_size) {
  if (samples.empty()) fail("evaluate_mean_dice: empty sample set");
  NoGradGuard ng;
  std::vector<std::size_t> ids(samples.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  double acc = 0;
  for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), at + static_cast<std::size_t>(batch_size));
    Batch b = make_batch(samples, ids, at, end);
    NetOutput<float> out = net.forward(b.image, /*training=*/false);
    const int B = static_cast<int>(end - at);
    const int H = b.image.shape().h(), W = b.image.shape().w();
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    for (int i = 0; i < B; ++i) {
      BinaryMap pred(H, W), gt(H, W);
      for (std::int64_t k = 0; k < plane; ++k) {
        pred.v[k] = out.mask_prob.data()[i * plane + k] > 0.5f ? 1 : 0;
        gt.v[k] = b.mask.data()[i * plane + k] > 0.5f ? 1 : 0;
      }
      MetricReport r;
      ratios(confusion(pred, gt), r);
      acc += r.dice;
    }
  }
  return acc / static_cast<double>(samples.size());
}

TrainResult train_model(Network<float>& net, const TrainConfig& cfg,
                        const std::vector<Sample>& train_set,
                        const std::vector<Sample>& val_set, const LossWeights& weights,
                        const std::string& out_dir, const std::string& config_json) {
  cfg.validate();
  if (train_set.empty()) fail("train: empty training set");

  const std::size_t n = train_set.size();
  const std::int64_t batches_per_epoch =
      static_cast<std::int64_t>((n + cfg.batch_size - 1) / cfg.batch_size);
  const std::int64_t max_iter = static_cast<std::int64_t>(cfg.epochs) * batches_per_epoch;

  std::ofstream history_csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    history_csv.open(fs::path(out_dir) / "history.csv", std::ios::trunc);
    if (!history_csv) fail("train: cannot open history.csv under '" + out_dir + "'");
    history_csv << "iter,loss,lr\n";
  }

  TrainResult res;
  Velocities velocity;
  Tape<float>& tape = Tape<float>::active();
  std::int64_t iter = 0;

  auto validate = [&](std::int64_t at_iter) {
    if (val_set.empty()) return;
    const double dice = evaluate_mean_dice(net, val_set, cfg.batch_size);
    res.val_history.push_back({at_iter, dice});
    res.final_val_dice = dice;
    if (dice > res.best_val_dice) {
      res.best_val_dice = dice;
      if (!out_dir.empty()) {
        res.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
        save_checkpoint(res.best_checkpoint, net.params(), velocity,
                        static_cast<std::uint64_t>(at_iter), config_json);
      }
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Seeded epoch shuffle, independent of all other random streams.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SplitMix64 rng(stream_seed(cfg.seed, "shuffle-epoch-" + std::to_string(epoch)));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[rng.next_u64() % i]);

    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, at + static_cast<std::size_t>(cfg.batch_size));
      Batch b = make_batch(train_set, order, at, end);
      const double lr = poly_lr(iter, max_iter, cfg);

      NetOutput<float> out = net.forward(b.image, /*training=*/true);
      Tensor<float> loss = total_loss(out, b.mask, b.boundary, weights);
      if (!std::isfinite(loss.item()))
        fail("train: non-finite loss at iteration " + std::to_string(iter) +
             " (first non-finite tensor: " + first_nonfinite(loss, out, net.params()) + ")");
      backward(loss);
      sgd_step(net.params(), velocity, lr, cfg);
      tape.reset();

      res.history.push_back({iter, static_cast<double>(loss.item()), lr});
      if (history_csv) {
        char line[96];
        std::snprintf(line, sizeof line, "%lld,%.17g,%.17g\n",
                      static_cast<long long>(iter), static_cast<double>(loss.item()), lr);
        history_csv << line;
      }
      ++iter;
      if (iter % cfg.eval_every == 0 && iter < max_iter) validate(iter);
    }
  }
  res.iterations = iter;
  validate(iter);

  if (!out_dir.empty()) {
    res.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
    save_checkpoint(res.last_checkpoint, net.params(), velocity,
                    static_cast<std::uint64_t>(iter), config_json);
    history_csv.flush();
  }
  return res;
}

}  // namespace bunet
