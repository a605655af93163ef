#pragma once

// 2-d convolution (NCHW) and the channel-wise 1-d convolution used by the
// attention gate. The general conv2d path lowers each (sample, group) to an
// im2col matrix and runs a single Eigen GEMM; two shapes that dominate this
// codebase get dedicated paths: 1x1/stride-1 convolutions are a plain GEMM
// over the input as-is, and stride-1 depthwise kernels accumulate shifted
// Eigen blocks without materializing patches at all.

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "bunet/flops.hpp"
#include "bunet/ops.hpp"

namespace bunet {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRM = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMapRM = Eigen::Map<const RowMat<S>>;

struct ConvDims {
  int N, Cin, H, W;
  int Cout, kh, kw;
  int stride, pad, dilation, groups;
  int cing, coutg;  // channels per group, in and out
  int OH, OW;
  std::int64_t plane_in, plane_out;  // H*W and OH*OW
  std::int64_t patch;                // cing*kh*kw, the im2col row count
};

inline ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad, int dilation,
                          int groups, std::int64_t bias_numel, bool has_bias) {
  if (xs.rank != 4) fail("conv2d: input must be rank 4 (N,C,H,W), got " + xs.str());
  if (ws.rank != 4) fail("conv2d: weight must be rank 4 (Cout,Cin/groups,kh,kw), got " + ws.str());
  if (stride < 1 || dilation < 1 || pad < 0 || groups < 1)
    fail("conv2d: stride/dilation must be >=1, pad >=0, groups >=1");
  ConvDims d{};
  d.N = xs.n(); d.Cin = xs.c(); d.H = xs.h(); d.W = xs.w();
  d.Cout = ws.n(); d.kh = ws.h(); d.kw = ws.w();
  d.stride = stride; d.pad = pad; d.dilation = dilation; d.groups = groups;
  if (d.Cin % groups != 0)
    fail("conv2d: input channels C=" + std::to_string(d.Cin) + " not divisible by groups=" +
         std::to_string(groups));
  if (d.Cout % groups != 0)
    fail("conv2d: output channels Cout=" + std::to_string(d.Cout) + " not divisible by groups=" +
         std::to_string(groups));
  d.cing = d.Cin / groups;
  d.coutg = d.Cout / groups;
  if (ws.c() != d.cing)
    fail("conv2d: weight expects Cin/groups=" + std::to_string(ws.c()) + " but input has C=" +
         std::to_string(d.Cin) + " with groups=" + std::to_string(groups));
  if (has_bias && bias_numel != d.Cout)
    fail("conv2d: bias has " + std::to_string(bias_numel) + " elements but Cout=" +
         std::to_string(d.Cout));
  d.OH = (d.H + 2 * pad - dilation * (d.kh - 1) - 1) / stride + 1;
  d.OW = (d.W + 2 * pad - dilation * (d.kw - 1) - 1) / stride + 1;
  if (d.H + 2 * pad < dilation * (d.kh - 1) + 1 || d.W + 2 * pad < dilation * (d.kw - 1) + 1 ||
      d.OH < 1 || d.OW < 1)
    fail("conv2d: output extent would be nonpositive for input " + xs.str() + ", kernel " +
         ws.str() + ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad) +
         ", dilation=" + std::to_string(dilation));
  d.plane_in = static_cast<std::int64_t>(d.H) * d.W;
  d.plane_out = static_cast<std::int64_t>(d.OH) * d.OW;
  d.patch = static_cast<std::int64_t>(d.cing) * d.kh * d.kw;
  return d;
}

// Gathers the patch matrix (patch x OH*OW, row-major) for one (sample, group)
// input slice. Out-of-image taps read as zero.
template <typename S>
void im2col(const ConvDims& d, const S* xg, S* cols) {
  std::memset(cols, 0, sizeof(S) * static_cast<std::size_t>(d.patch * d.plane_out));
  for (int ci = 0; ci < d.cing; ++ci) {
    const S* xplane = xg + ci * d.plane_in;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        S* row = cols + (static_cast<std::int64_t>(ci) * d.kh * d.kw + ky * d.kw + kx) *
                            d.plane_out;
        const int oyo = ky * d.dilation - d.pad;  // iy = oy*stride + oyo
        const int oxo = kx * d.dilation - d.pad;
        for (int oy = 0; oy < d.OH; ++oy) {
          const int iy = oy * d.stride + oyo;
          if (iy < 0 || iy >= d.H) continue;
          const S* src = xplane + static_cast<std::int64_t>(iy) * d.W;
          S* dst = row + static_cast<std::int64_t>(oy) * d.OW;
          if (d.stride == 1) {
            const int ox0 = std::max(0, -oxo);
            const int ox1 = std::min(d.OW - 1, d.W - 1 - oxo);
            if (ox1 >= ox0)
              std::memcpy(dst + ox0, src + ox0 + oxo,
                          sizeof(S) * static_cast<std::size_t>(ox1 - ox0 + 1));
          } else {
            for (int ox = 0; ox < d.OW; ++ox) {
              const int ix = ox * d.stride + oxo;
              if (ix >= 0 && ix < d.W) dst[ox] = src[ix];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a patch-matrix gradient back onto the input slice (adjoint
// of im2col; overlapping taps accumulate).
template <typename S>
void col2im_add(const ConvDims& d, const S* cols, S* gx) {
  for (int ci = 0; ci < d.cing; ++ci) {
    S* gplane = gx + ci * d.plane_in;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const S* row = cols + (static_cast<std::int64_t>(ci) * d.kh * d.kw + ky * d.kw + kx) *
                                  d.plane_out;
        const int oyo = ky * d.dilation - d.pad;
        const int oxo = kx * d.dilation - d.pad;
        for (int oy = 0; oy < d.OH; ++oy) {
          const int iy = oy * d.stride + oyo;
          if (iy < 0 || iy >= d.H) continue;
          S* dst = gplane + static_cast<std::int64_t>(iy) * d.W;
          const S* src = row + static_cast<std::int64_t>(oy) * d.OW;
          for (int ox = 0; ox < d.OW; ++ox) {
            const int ix = ox * d.stride + oxo;
            if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Overlap of the kernel tap (ky, kx) with the image for stride-1 convolutions,
// as aligned block ranges in output and input coordinates.
struct TapSpan {
  int oy0, ox0, iy0, ix0, rows, cols;
  bool empty;
};

inline TapSpan tap_span(const ConvDims& d, int ky, int kx) {
  const int oyo = ky * d.dilation - d.pad;
  const int oxo = kx * d.dilation - d.pad;
  TapSpan t{};
  t.oy0 = std::max(0, -oyo);
  t.ox0 = std::max(0, -oxo);
  const int oy1 = std::min(d.OH - 1, d.H - 1 - oyo);
  const int ox1 = std::min(d.OW - 1, d.W - 1 - oxo);
  t.iy0 = t.oy0 + oyo;
  t.ix0 = t.ox0 + oxo;
  t.rows = oy1 - t.oy0 + 1;
  t.cols = ox1 - t.ox0 + 1;
  t.empty = t.rows <= 0 || t.cols <= 0;
  return t;
}

}  // namespace detail

// y = conv2d(x, w) + b. x: (N,Cin,H,W); w: (Cout,Cin/groups,kh,kw); b: (Cout)
// or an invalid tensor for no bias. Differentiable in x, w and b.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias = Tensor<S>(),
                 int stride = 1, int pad = 0, int dilation = 1, int groups = 1) {
  detail::require_valid("conv2d", x, "input");
  detail::require_valid("conv2d", w, "weight");
  const bool has_bias = bias.valid();
  const detail::ConvDims d =
      detail::conv_dims(x.shape(), w.shape(), stride, pad, dilation, groups,
                        has_bias ? bias.numel() : 0, has_bias);

  const bool onebyone = d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0 && d.dilation == 1;
  const bool depthwise = d.cing == 1 && d.coutg == 1 && d.stride == 1 && !onebyone;

  Tensor<S> out(Shape::nchw(d.N, d.Cout, d.OH, d.OW));
  const S* xd = x.data();
  const S* wd = w.data();
  S* od = out.data();

  if (onebyone) {
    for (int n = 0; n < d.N; ++n)
      for (int g = 0; g < d.groups; ++g) {
        detail::ConstMapRM<S> W(wd + static_cast<std::int64_t>(g) * d.coutg * d.cing, d.coutg,
                                d.cing);
        detail::ConstMapRM<S> X(xd + (static_cast<std::int64_t>(n) * d.Cin + g * d.cing) *
                                          d.plane_in,
                                d.cing, d.plane_in);
        detail::MapRM<S> O(od + (static_cast<std::int64_t>(n) * d.Cout + g * d.coutg) *
                                    d.plane_out,
                           d.coutg, d.plane_out);
        O.noalias() = W * X;
      }
  } else if (depthwise) {
    std::memset(od, 0, sizeof(S) * static_cast<std::size_t>(out.numel()));
    for (int n = 0; n < d.N; ++n)
      for (int c = 0; c < d.Cin; ++c) {
        detail::ConstMapRM<S> X(xd + (static_cast<std::int64_t>(n) * d.Cin + c) * d.plane_in,
                                d.H, d.W);
        detail::MapRM<S> O(od + (static_cast<std::int64_t>(n) * d.Cout + c) * d.plane_out, d.OH,
                           d.OW);
        const S* wk = wd + static_cast<std::int64_t>(c) * d.kh * d.kw;
        for (int ky = 0; ky < d.kh; ++ky)
          for (int kx = 0; kx < d.kw; ++kx) {
            const detail::TapSpan t = detail::tap_span(d, ky, kx);
            if (t.empty) continue;
            O.block(t.oy0, t.ox0, t.rows, t.cols) +=
                wk[ky * d.kw + kx] * X.block(t.iy0, t.ix0, t.rows, t.cols);
          }
      }
  } else {
    std::vector<S> cols(static_cast<std::size_t>(d.patch * d.plane_out));
    for (int n = 0; n < d.N; ++n)
      for (int g = 0; g < d.groups; ++g) {
        detail::im2col(d, xd + (static_cast<std::int64_t>(n) * d.Cin + g * d.cing) * d.plane_in,
                       cols.data());
        detail::ConstMapRM<S> W(wd + static_cast<std::int64_t>(g) * d.coutg * d.patch, d.coutg,
                                d.patch);
        detail::ConstMapRM<S> C(cols.data(), d.patch, d.plane_out);
        detail::MapRM<S> O(od + (static_cast<std::int64_t>(n) * d.Cout + g * d.coutg) *
                                    d.plane_out,
                           d.coutg, d.plane_out);
        O.noalias() = W * C;
      }
  }

  if (has_bias) {
    const S* bd = bias.data();
    for (int n = 0; n < d.N; ++n)
      for (int oc = 0; oc < d.Cout; ++oc) {
        S* plane = od + (static_cast<std::int64_t>(n) * d.Cout + oc) * d.plane_out;
        const S bv = bd[oc];
        for (std::int64_t k = 0; k < d.plane_out; ++k) plane[k] += bv;
      }
  }

  count_flops(static_cast<std::uint64_t>(2) * d.patch * d.coutg * d.groups * d.plane_out * d.N +
              (has_bias ? static_cast<std::uint64_t>(d.Cout) * d.plane_out * d.N : 0));

  Tensor<S> tx = x, tw = w, tb = bias;
  auto xbuf = x.buffer();
  auto wbuf = w.buffer();
  detail::wire(out, "conv2d", {&tx, &tw, &tb}, [=](const std::vector<int>& ids) ->
                                                   typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      const S* gx_src = g.data();
      if (ids[2] >= 0) {  // bias
        auto& gb = tape.grad_of(ids[2]);
        for (int n = 0; n < d.N; ++n)
          for (int oc = 0; oc < d.Cout; ++oc) {
            const S* plane = gx_src + (static_cast<std::int64_t>(n) * d.Cout + oc) * d.plane_out;
            S acc = S(0);
            for (std::int64_t k = 0; k < d.plane_out; ++k) acc += plane[k];
            gb[oc] += acc;
          }
      }
      if (ids[0] < 0 && ids[1] < 0) return;
      const S* xd2 = xbuf->data();
      const S* wd2 = wbuf->data();

      if (onebyone) {
        for (int n = 0; n < d.N; ++n)
          for (int grp = 0; grp < d.groups; ++grp) {
            detail::ConstMapRM<S> G(gx_src + (static_cast<std::int64_t>(n) * d.Cout +
                                              grp * d.coutg) * d.plane_out,
                                    d.coutg, d.plane_out);
            if (ids[1] >= 0) {
              detail::ConstMapRM<S> X(xd2 + (static_cast<std::int64_t>(n) * d.Cin +
                                             grp * d.cing) * d.plane_in,
                                      d.cing, d.plane_in);
              detail::MapRM<S> GW(tape.grad_of(ids[1]).data() +
                                      static_cast<std::int64_t>(grp) * d.coutg * d.cing,
                                  d.coutg, d.cing);
              GW.noalias() += G * X.transpose();
            }
            if (ids[0] >= 0) {
              detail::ConstMapRM<S> W(wd2 + static_cast<std::int64_t>(grp) * d.coutg * d.cing,
                                      d.coutg, d.cing);
              detail::MapRM<S> GX(tape.grad_of(ids[0]).data() +
                                      (static_cast<std::int64_t>(n) * d.Cin + grp * d.cing) *
                                          d.plane_in,
                                  d.cing, d.plane_in);
              GX.noalias() += W.transpose() * G;
            }
          }
      } else if (depthwise) {
        for (int n = 0; n < d.N; ++n)
          for (int c = 0; c < d.Cin; ++c) {
            detail::ConstMapRM<S> G(gx_src + (static_cast<std::int64_t>(n) * d.Cout + c) *
                                                 d.plane_out,
                                    d.OH, d.OW);
            detail::ConstMapRM<S> X(xd2 + (static_cast<std::int64_t>(n) * d.Cin + c) *
                                              d.plane_in,
                                    d.H, d.W);
            for (int ky = 0; ky < d.kh; ++ky)
              for (int kx = 0; kx < d.kw; ++kx) {
                const detail::TapSpan t = detail::tap_span(d, ky, kx);
                if (t.empty) continue;
                if (ids[1] >= 0) {
                  // Row-major sequential accumulation keeps the weight
                  // gradient independent of buffer placement (vectorized
                  // redux would split lanes by alignment).
                  S acc{};
                  for (int r = 0; r < t.rows; ++r)
                    for (int cc = 0; cc < t.cols; ++cc)
                      acc += G(t.oy0 + r, t.ox0 + cc) * X(t.iy0 + r, t.ix0 + cc);
                  tape.grad_of(ids[1])[static_cast<std::int64_t>(c) * d.kh * d.kw + ky * d.kw +
                                       kx] += acc;
                }
                if (ids[0] >= 0) {
                  detail::MapRM<S> GX(tape.grad_of(ids[0]).data() +
                                          (static_cast<std::int64_t>(n) * d.Cin + c) * d.plane_in,
                                      d.H, d.W);
                  GX.block(t.iy0, t.ix0, t.rows, t.cols) +=
                      wd2[static_cast<std::int64_t>(c) * d.kh * d.kw + ky * d.kw + kx] *
                      G.block(t.oy0, t.ox0, t.rows, t.cols);
                }
              }
          }
      } else {
        std::vector<S> cols(static_cast<std::size_t>(d.patch * d.plane_out));
        std::vector<S> gcols;
        if (ids[0] >= 0) gcols.resize(static_cast<std::size_t>(d.patch * d.plane_out));
        for (int n = 0; n < d.N; ++n)
          for (int grp = 0; grp < d.groups; ++grp) {
            detail::ConstMapRM<S> G(gx_src + (static_cast<std::int64_t>(n) * d.Cout +
                                              grp * d.coutg) * d.plane_out,
                                    d.coutg, d.plane_out);
            if (ids[1] >= 0) {
              detail::im2col(d, xd2 + (static_cast<std::int64_t>(n) * d.Cin + grp * d.cing) *
                                          d.plane_in,
                             cols.data());
              detail::ConstMapRM<S> C(cols.data(), d.patch, d.plane_out);
              detail::MapRM<S> GW(tape.grad_of(ids[1]).data() +
                                      static_cast<std::int64_t>(grp) * d.coutg * d.patch,
                                  d.coutg, d.patch);
              GW.noalias() += G * C.transpose();
            }
            if (ids[0] >= 0) {
              detail::ConstMapRM<S> W(wd2 + static_cast<std::int64_t>(grp) * d.coutg * d.patch,
                                      d.coutg, d.patch);
              detail::MapRM<S> GC(gcols.data(), d.patch, d.plane_out);
              GC.noalias() = W.transpose() * G;
              detail::col2im_add(d, gcols.data(),
                                 tape.grad_of(ids[0]).data() +
                                     (static_cast<std::int64_t>(n) * d.Cin + grp * d.cing) *
                                         d.plane_in);
            }
          }
      }
    };
  });
  return out;
}

// Channel-wise 1-d convolution: x (N, C) filtered along the channel axis by a
// single shared odd-length kernel w (k), zero-padded, no bias.
template <typename S>
Tensor<S> conv1d_channels(const Tensor<S>& x, const Tensor<S>& w) {
  detail::require_valid("conv1d_channels", x, "input");
  detail::require_valid("conv1d_channels", w, "weight");
  if (x.rank() != 2) fail("conv1d_channels: input must be rank 2 (N,C), got " + x.shape().str());
  if (w.rank() != 1) fail("conv1d_channels: weight must be rank 1, got " + w.shape().str());
  const int k = w.shape()[0];
  if (k % 2 == 0) fail("conv1d_channels: kernel length must be odd, got " + std::to_string(k));
  const int N = x.shape()[0], C = x.shape()[1], half = k / 2;

  Tensor<S> out(x.shape());
  const S* xd = x.data();
  const S* wd = w.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      S acc = S(0);
      for (int j = 0; j < k; ++j) {
        const int cc = c + j - half;
        if (cc >= 0 && cc < C) acc += wd[j] * xd[n * C + cc];
      }
      out.data()[n * C + c] = acc;
    }
  count_flops(static_cast<std::uint64_t>(2) * k * N * C);

  Tensor<S> tx = x, tw = w;
  auto xbuf = x.buffer();
  auto wbuf = w.buffer();
  detail::wire(out, "conv1d_channels", {&tx, &tw}, [=](const std::vector<int>& ids) ->
                                                       typename Tape<S>::BackwardFn {
    return [=](Tape<S>& tape, const std::vector<S>& g) {
      if (ids[1] >= 0) {
        auto& gw = tape.grad_of(ids[1]);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c)
            for (int j = 0; j < k; ++j) {
              const int cc = c + j - half;
              if (cc >= 0 && cc < C) gw[j] += g[n * C + c] * (*xbuf)[n * C + cc];
            }
      }
      if (ids[0] >= 0) {
        auto& gx = tape.grad_of(ids[0]);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c)
            for (int j = 0; j < k; ++j) {
              const int cc = c + j - half;
              if (cc >= 0 && cc < C) gx[n * C + cc] += g[n * C + c] * (*wbuf)[j];
            }
      }
    };
  });
  return out;
}

}  // namespace bunet
