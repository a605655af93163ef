#pragma once

// Spatial resampling ops: 2x2 max pooling, bilinear upsampling (half-pixel
// aligned, edges clamped) and global average pooling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bunet/ops.hpp"

namespace bunet {

// 2x2 max pooling with stride 2. Extents must be even; gradient routes to the
// argmax element of each window (first occurrence on ties).
template <typename S>
Tensor<S> maxpool2x2(const Tensor<S>& x) {
  detail::require_valid("maxpool2x2", x, "input");
  if (x.rank() != 4) fail("maxpool2x2: input must be rank 4, got " + x.shape().str());
  const int N = x.shape().n(), C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  if (H % 2 != 0 || W % 2 != 0)
    fail("maxpool2x2: spatial extents must be even, got " + x.shape().str());
  const int OH = H / 2, OW = W / 2;

  Tensor<S> out(Shape::nchw(N, C, OH, OW));
  // Flat index into x of each window's max, for the backward scatter.
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.numel());
  const S* xd = x.data();
  S* od = out.data();
  std::int64_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox, ++oi) {
          const std::int64_t p = base + static_cast<std::int64_t>(2 * oy) * W + 2 * ox;
          std::int64_t best = p;
          if (xd[p + 1] > xd[best]) best = p + 1;
          if (xd[p + W] > xd[best]) best = p + W;
          if (xd[p + W + 1] > xd[best]) best = p + W + 1;
          od[oi] = xd[best];
          (*argmax)[oi] = best;
        }
    }

  Tensor<S> tx = x;
  detail::wire(out, "maxpool2x2", {&tx}, [=](const std::vector<int>& ids) ->
                                             typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] < 0) return;
      auto& gx = tape.grad_of(ids[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
    };
  });
  return out;
}

namespace detail {

// Per-output-index source taps for one axis of a bilinear resize with
// half-pixel centers: out o reads in[i0]*(1-lam) + in[i1]*lam.
struct AxisTap {
  std::vector<int> i0, i1;
  std::vector<double> lam;
};

inline AxisTap bilinear_axis(int in, int out) {
  AxisTap t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.lam.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    t.i0[o] = i0;
    t.i1[o] = i0 < in - 1 ? i0 + 1 : i0;
    t.lam[o] = src - i0;
  }
  return t;
}

}  // namespace detail

// Bilinear resize to (out_h, out_w) with half-pixel source alignment; output
// corners replicate the input values they map to, edges clamp.
template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, int out_h, int out_w) {
  detail::require_valid("upsample_bilinear", x, "input");
  if (x.rank() != 4) fail("upsample_bilinear: input must be rank 4, got " + x.shape().str());
  if (out_h < 1 || out_w < 1) fail("upsample_bilinear: output extents must be positive");
  const int N = x.shape().n(), C = x.shape().c(), H = x.shape().h(), W = x.shape().w();

  auto ty = std::make_shared<detail::AxisTap>(detail::bilinear_axis(H, out_h));
  auto tx_ = std::make_shared<detail::AxisTap>(detail::bilinear_axis(W, out_w));

  Tensor<S> out(Shape::nchw(N, C, out_h, out_w));
  const S* xd = x.data();
  S* od = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = xd + (static_cast<std::int64_t>(n) * C + c) * H * W;
      S* oplane = od + (static_cast<std::int64_t>(n) * C + c) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ty->i0[oy], y1 = ty->i1[oy];
        const double ly = ty->lam[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = tx_->i0[ox], x1 = tx_->i1[ox];
          const double lx = tx_->lam[ox];
          const double v = (1 - ly) * ((1 - lx) * plane[y0 * W + x0] + lx * plane[y0 * W + x1]) +
                           ly * ((1 - lx) * plane[y1 * W + x0] + lx * plane[y1 * W + x1]);
          oplane[oy * out_w + ox] = static_cast<S>(v);
        }
      }
    }

  Tensor<S> txx = x;
  detail::wire(out, "upsample_bilinear", {&txx}, [=](const std::vector<int>& ids) ->
                                                     typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] < 0) return;
      auto& gx = tape.grad_of(ids[0]);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          S* gplane = gx.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
          const S* gop = g.data() + (static_cast<std::int64_t>(n) * C + c) * out_h * out_w;
          for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ty->i0[oy], y1 = ty->i1[oy];
            const double ly = ty->lam[oy];
            for (int ox = 0; ox < out_w; ++ox) {
              const int x0 = tx_->i0[ox], x1 = tx_->i1[ox];
              const double lx = tx_->lam[ox];
              const S gv = gop[oy * out_w + ox];
              gplane[y0 * W + x0] += static_cast<S>((1 - ly) * (1 - lx)) * gv;
              gplane[y0 * W + x1] += static_cast<S>((1 - ly) * lx) * gv;
              gplane[y1 * W + x0] += static_cast<S>(ly * (1 - lx)) * gv;
              gplane[y1 * W + x1] += static_cast<S>(ly * lx) * gv;
            }
          }
        }
    };
  });
  return out;
}

// Mean over each spatial plane: (N,C,H,W) -> (N,C,1,1).
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  detail::require_valid("global_avg_pool", x, "input");
  if (x.rank() != 4) fail("global_avg_pool: input must be rank 4, got " + x.shape().str());
  const int N = x.shape().n(), C = x.shape().c();
  const std::int64_t plane = static_cast<std::int64_t>(x.shape().h()) * x.shape().w();
  Tensor<S> out(Shape::nchw(N, C, 1, 1));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* p = x.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      S acc = S(0);
      for (std::int64_t k = 0; k < plane; ++k) acc += p[k];
      out.data()[n * C + c] = acc / static_cast<S>(plane);
    }
  Tensor<S> tx = x;
  detail::wire(out, "global_avg_pool", {&tx}, [=](const std::vector<int>& ids) ->
                                                  typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[0] < 0) return;
      auto& gx = tape.grad_of(ids[0]);
      const S inv = S(1) / static_cast<S>(plane);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const S gv = g[n * C + c] * inv;
          S* dst = gx.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
          for (std::int64_t k = 0; k < plane; ++k) dst[k] += gv;
        }
    };
  });
  return out;
}

}  // namespace bunet
