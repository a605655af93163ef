#pragma once

// Batch normalization over (N, H, W) per channel. Training mode normalizes by
// batch statistics (population variance) and updates the running estimates in
// place; eval mode normalizes by the running estimates. gamma and beta are
// differentiable; running statistics are plain state and never touch the tape.

#include <cmath>
#include <string>
#include <vector>

#include "bunet/flops.hpp"
#include "bunet/ops.hpp"

namespace bunet {

template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                      double momentum = 0.1, double eps = 1e-5) {
  detail::require_valid("batchnorm2d", x, "input");
  detail::require_valid("batchnorm2d", gamma, "gamma");
  detail::require_valid("batchnorm2d", beta, "beta");
  if (x.rank() != 4) fail("batchnorm2d: input must be rank 4, got " + x.shape().str());
  const int N = x.shape().n(), C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  if (gamma.numel() != C || beta.numel() != C)
    fail("batchnorm2d: gamma/beta must have C=" + std::to_string(C) + " elements, got " +
         std::to_string(gamma.numel()) + "/" + std::to_string(beta.numel()));
  const std::int64_t m = static_cast<std::int64_t>(N) * H * W;  // elements per channel
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;

  if (training && m == 1)
    fail("batchnorm2d: cannot compute batch statistics from a single element per channel "
         "(N*H*W=1); use a larger batch or spatial extent");
  if (!training && (running_mean.numel() != C || running_var.numel() != C))
    fail("batchnorm2d: eval mode requires initialized running statistics with C=" +
         std::to_string(C) + " elements");

  // Per-channel mean and inverse standard deviation actually used to
  // normalize (batch stats in training, running stats in eval).
  std::vector<S> mu(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double acc = 0;
      for (int n = 0; n < N; ++n) {
        const S* p = x.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        for (std::int64_t k = 0; k < plane; ++k) acc += p[k];
      }
      const double mean_c = acc / static_cast<double>(m);
      double var_acc = 0;
      for (int n = 0; n < N; ++n) {
        const S* p = x.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        for (std::int64_t k = 0; k < plane; ++k) {
          const double dlt = p[k] - mean_c;
          var_acc += dlt * dlt;
        }
      }
      const double var_c = var_acc / static_cast<double>(m);  // population variance
      mu[c] = static_cast<S>(mean_c);
      inv_std[c] = static_cast<S>(1.0 / std::sqrt(var_c + eps));
      running_mean.data()[c] =
          static_cast<S>((1.0 - momentum) * running_mean.data()[c] + momentum * mean_c);
      running_var.data()[c] =
          static_cast<S>((1.0 - momentum) * running_var.data()[c] + momentum * var_c);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mu[c] = running_mean.data()[c];
      inv_std[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + eps));
    }
  }

  Tensor<S> out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
      const S a = gamma.data()[c] * inv_std[c];
      const S b = beta.data()[c] - a * mu[c];
      for (std::int64_t k = 0; k < plane; ++k) out.data()[off + k] = a * x.data()[off + k] + b;
    }
  count_flops(static_cast<std::uint64_t>(2) * x.numel());

  Tensor<S> tx = x, tg = gamma, tb = beta;
  auto xbuf = x.buffer();
  auto gammabuf = gamma.buffer();
  auto mu_sh = std::make_shared<std::vector<S>>(std::move(mu));
  auto is_sh = std::make_shared<std::vector<S>>(std::move(inv_std));
  detail::wire(out, "batchnorm2d", {&tx, &tg, &tb}, [=](const std::vector<int>& ids) ->
                                                        typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      const std::vector<S>& xv = *xbuf;
      for (int c = 0; c < C; ++c) {
        const S muc = (*mu_sh)[c], isc = (*is_sh)[c];
        // sum_g = sum(dy), sum_gx = sum(dy * x_hat) over the channel
        double sum_g = 0, sum_gx = 0;
        for (int n = 0; n < N; ++n) {
          const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
          for (std::int64_t k = 0; k < plane; ++k) {
            const double gv = g[off + k];
            sum_g += gv;
            sum_gx += gv * ((xv[off + k] - muc) * isc);
          }
        }
        if (ids[1] >= 0) tape.grad_of(ids[1])[c] += static_cast<S>(sum_gx);
        if (ids[2] >= 0) tape.grad_of(ids[2])[c] += static_cast<S>(sum_g);
        if (ids[0] >= 0) {
          auto& gx = tape.grad_of(ids[0]);
          const S a = (*gammabuf)[c] * isc;
          if (training) {
            const S mg = static_cast<S>(sum_g / static_cast<double>(m));
            const S mgx = static_cast<S>(sum_gx / static_cast<double>(m));
            for (int n = 0; n < N; ++n) {
              const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
              for (std::int64_t k = 0; k < plane; ++k) {
                const S xhat = (xv[off + k] - muc) * isc;
                gx[off + k] += a * (g[off + k] - mg - xhat * mgx);
              }
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
              for (std::int64_t k = 0; k < plane; ++k) gx[off + k] += a * g[off + k];
            }
          }
        }
      }
    };
  });
  return out;
}

}  // namespace bunet
