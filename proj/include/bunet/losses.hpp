#pragma once

// Training losses. All of them take probability maps (post-sigmoid) and binary
// targets, return scalar tensors on the tape, and average over the batch.

#include <string>
#include <vector>

#include "bunet/network.hpp"
#include "bunet/ops.hpp"
#include "bunet/spatial.hpp"

namespace bunet {

struct LossWeights {
  double lambda_bce = 0.5;       // weight of the BCE term in the segmentation loss
  double lambda_boundary = 0.7;  // weight of the deep boundary supervision
  double dice_eps = 1e-6;        // smoothing; defines the empty/empty case as loss 0
  double bce_clamp = 1e-7;       // probability clamp to keep log finite
};

namespace detail {

// Splits (N,1,H,W) into per-sample (1,1,H,W) tensors via a channel-axis view.
template <typename S>
std::vector<Tensor<S>> per_sample(const Tensor<S>& t) {
  const int N = t.shape().n(), H = t.shape().h(), W = t.shape().w();
  if (N == 1) return {t};
  Tensor<S> stacked = reshape(t, Shape{1, N, H, W});
  std::vector<Tensor<S>> parts = split_channels(stacked, std::vector<int>(N, 1));
  return parts;
}

}  // namespace detail

// Soft Dice loss, averaged per sample:
//   1 - mean_n (2*sum(p*y) + eps) / (sum(p^2) + sum(y^2) + eps)
template <typename S>
Tensor<S> dice_loss(const Tensor<S>& y_hat, const Tensor<S>& y, double eps = 1e-6) {
  detail::require_same_shape("dice_loss", y_hat, y);
  if (y_hat.rank() != 4 || y_hat.shape().c() != 1)
    fail("dice_loss: expected (N,1,H,W) maps, got " + y_hat.shape().str());
  std::vector<Tensor<S>> ps = detail::per_sample(y_hat);
  std::vector<Tensor<S>> ys = detail::per_sample(y);
  Tensor<S> acc;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor<S> inter = sum(mul(ps[i], ys[i]));
    Tensor<S> norms = add(sum(mul(ps[i], ps[i])), sum(mul(ys[i], ys[i])));
    Tensor<S> dice = div(affine(inter, 2.0, eps), affine(norms, 1.0, eps));
    acc = i == 0 ? dice : add(acc, dice);
  }
  // 1 - mean dice
  return affine(acc, -1.0 / static_cast<double>(ps.size()), 1.0);
}

// Binary cross-entropy with probability clamping, averaged over every pixel
// of the batch.
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& y_hat, const Tensor<S>& y, double clamp_eps = 1e-7) {
  detail::require_same_shape("bce_loss", y_hat, y);
  Tensor<S> p = clamp(y_hat, clamp_eps, 1.0 - clamp_eps);
  Tensor<S> pos = mul(y, log(p));                                  // y*ln(p)
  Tensor<S> neg = mul(affine(y, -1.0, 1.0), log(affine(p, -1.0, 1.0)));  // (1-y)*ln(1-p)
  return affine(mean(add(pos, neg)), -1.0, 0.0);
}

// Deep boundary supervision: each of the 4 stage maps is bilinearly upsampled
// to the full-resolution boundary target and scored with BCE; the result is
// the mean over stages.
template <typename S>
Tensor<S> boundary_loss(const std::vector<Tensor<S>>& boundary_probs, const Tensor<S>& b_gt,
                        double clamp_eps = 1e-7) {
  if (boundary_probs.size() != 4)
    fail("boundary_loss: expected 4 stage maps (one per decoder stage), got " +
         std::to_string(boundary_probs.size()));
  const int H = b_gt.shape().h(), W = b_gt.shape().w();
  Tensor<S> acc;
  for (std::size_t k = 0; k < boundary_probs.size(); ++k) {
    Tensor<S> up = boundary_probs[k];
    if (up.shape().h() != H || up.shape().w() != W) up = upsample_bilinear(up, H, W);
    Tensor<S> term = bce_loss(up, b_gt, clamp_eps);
    acc = k == 0 ? term : add(acc, term);
  }
  return affine(acc, 1.0 / static_cast<double>(boundary_probs.size()), 0.0);
}

// Full objective: dice + lambda_bce * bce on the mask, plus
// lambda_boundary * boundary when boundary maps are present (BD enabled).
template <typename S>
Tensor<S> total_loss(const NetOutput<S>& out, const Tensor<S>& y, const Tensor<S>& b_gt,
                     const LossWeights& w = LossWeights{}) {
  Tensor<S> seg = dice_loss(out.mask_prob, y, w.dice_eps);
  if (w.lambda_bce != 0.0)
    seg = add(seg, affine(bce_loss(out.mask_prob, y, w.bce_clamp), w.lambda_bce, 0.0));
  if (w.lambda_boundary != 0.0 && !out.boundary_probs.empty())
    seg = add(seg, affine(boundary_loss(out.boundary_probs, b_gt, w.bce_clamp),
                          w.lambda_boundary, 0.0));
  return seg;
}

}  // namespace bunet
